//! Parameter-free common/specific decoupling.
//!
//! Every timestep of a modality is compared with every timestep of the other
//! modalities by cosine similarity. The per-pair similarity matrices are
//! merged by a comparison function into a single `L × L` score `S`, clamped to
//! `[0, 1]`. `S` and `1 − S` are row-normalized into the common and specific
//! mixing weights `W_c`, `W_s`, and the decoupled sequences are `W_c·Z` and
//! `W_s·Z`.
//!
//! The whole computation is recorded on a [`Tape`] so that gradients reach
//! whatever produced `Z`; there are no trainable parameters here.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{MmclError, Result};

/// How similarity matrices from several partner modalities are merged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    /// Entrywise minimum: common only if similar to every partner.
    #[default]
    Minor,
    /// Entrywise maximum: common if similar to any partner.
    Major,
    /// Entrywise arithmetic mean.
    Mean,
}

impl CompareMode {
    pub const ALL: [CompareMode; 3] = [CompareMode::Minor, CompareMode::Major, CompareMode::Mean];
}

/// Cosine similarities between the timesteps of two modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Tensor,
    pub source_pair: (usize, usize),
}

/// Decoupled sequences of one modality together with their mixing weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoupledPair {
    pub common: Tensor,
    pub specific: Tensor,
    pub w_common: Tensor,
    pub w_specific: Tensor,
}

/// Tape handles for a decoupling recorded inside a larger graph.
#[derive(Clone, Copy, Debug)]
pub struct DecoupledVars {
    pub common: Var,
    pub specific: Var,
    pub w_common: Var,
    pub w_specific: Var,
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if !a.is_matrix() || a.shape() != b.shape() {
        return Err(MmclError::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Records `cos(za_i, zb_j)` for all `i, j`. Zero rows give similarity 0.
pub fn pairwise_cosine_on(tape: &mut Tape, za: Var, zb: Var) -> Result<Var> {
    check_same_shape("pairwise_cosine", tape.value(za), tape.value(zb))?;
    let ua = tape.row_unit(za)?;
    let ub = tape.row_unit(zb)?;
    let ubt = tape.transpose(ub)?;
    let s = tape.matmul(ua, ubt)?;
    // rounding can push |cos| a hair past 1
    Ok(tape.clamp(s, -1.0, 1.0))
}

/// Merges similarity matrices entrywise according to `mode`.
pub fn combine_on(tape: &mut Tape, sims: &[Var], mode: CompareMode) -> Result<Var> {
    let (&first, rest) = sims
        .split_first()
        .ok_or_else(|| MmclError::Invalid("combine_similarities: no similarity matrices".into()))?;
    let mut acc = first;
    for &s in rest {
        acc = match mode {
            CompareMode::Minor => tape.minimum(acc, s)?,
            CompareMode::Major => tape.maximum(acc, s)?,
            CompareMode::Mean => tape.add(acc, s)?,
        };
    }
    if mode == CompareMode::Mean && !rest.is_empty() {
        acc = tape.scalar_mul(acc, 1.0 / sims.len() as f64);
    }
    Ok(acc)
}

/// Records the decoupling of `z` against `others`.
pub fn decouple_on(
    tape: &mut Tape,
    z: Var,
    others: &[Var],
    mode: CompareMode,
) -> Result<DecoupledVars> {
    if others.is_empty() {
        return Err(MmclError::Invalid(
            "decouple: at least one other modality is required".into(),
        ));
    }
    let mut sims = Vec::with_capacity(others.len());
    for &o in others {
        sims.push(pairwise_cosine_on(tape, z, o)?);
    }
    let combined = combine_on(tape, &sims, mode)?;
    let s = tape.clamp(combined, 0.0, 1.0);
    let neg = tape.neg(s);
    let raw_specific = tape.add_scalar(neg, 1.0);
    let w_common = tape.row_normalize_sum(s)?;
    let w_specific = tape.row_normalize_sum(raw_specific)?;
    let common = tape.matmul(w_common, z)?;
    let specific = tape.matmul(w_specific, z)?;
    Ok(DecoupledVars {
        common,
        specific,
        w_common,
        w_specific,
    })
}

/// Cosine similarity matrix between two `L × d` sequences.
pub fn pairwise_cosine(za: &Tensor, zb: &Tensor) -> Result<SimilarityMatrix> {
    pairwise_cosine_between(za, zb, (0, 1))
}

pub fn pairwise_cosine_between(
    za: &Tensor,
    zb: &Tensor,
    source_pair: (usize, usize),
) -> Result<SimilarityMatrix> {
    let mut tape = Tape::new();
    let a = tape.constant(za.clone());
    let b = tape.constant(zb.clone());
    let s = pairwise_cosine_on(&mut tape, a, b)?;
    Ok(SimilarityMatrix {
        values: tape.value(s).clone(),
        source_pair,
    })
}

pub fn combine_similarities(sims: &[SimilarityMatrix], mode: CompareMode) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = sims
        .iter()
        .map(|s| tape.constant(s.values.clone()))
        .collect();
    let out = combine_on(&mut tape, &vars, mode)?;
    Ok(tape.value(out).clone())
}

/// Splits `z` into common and specific parts relative to `others`.
///
/// ```
/// use mmcl::decoupling::{decouple, CompareMode};
/// use mmcl::diffcore::Tensor;
///
/// let v = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
/// let a = Tensor::from_rows(&[[1.0, 0.1], [0.2, 1.0], [-1.0, 0.0]]).unwrap();
/// let t = Tensor::from_rows(&[[0.9, 0.0], [0.0, 1.0], [0.5, 0.5]]).unwrap();
/// let pair = decouple(&v, &[a, t], CompareMode::Minor).unwrap();
/// for i in 0..3 {
///     let row: f64 = pair.w_common.row(i).iter().sum();
///     assert!((row - 1.0).abs() < 1e-12);
/// }
/// ```
pub fn decouple(z: &Tensor, others: &[Tensor], mode: CompareMode) -> Result<DecoupledPair> {
    for o in others {
        check_same_shape("decouple", z, o)?;
    }
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let ov: Vec<Var> = others.iter().map(|o| tape.constant(o.clone())).collect();
    let d = decouple_on(&mut tape, zv, &ov, mode)?;
    Ok(DecoupledPair {
        common: tape.value(d.common).clone(),
        specific: tape.value(d.specific).clone(),
        w_common: tape.value(d.w_common).clone(),
        w_specific: tape.value(d.w_specific).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn self_similarity_has_unit_diagonal() {
        let z = m(&[&[1.0, 2.0, 0.0], &[0.0, 0.0, 0.0], &[-3.0, 0.5, 1.0]]);
        let s = pairwise_cosine(&z, &z).unwrap().values;
        assert!((s.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((s.get(2, 2) - 1.0).abs() < 1e-15);
        // the zero row gives 0, not NaN
        assert_eq!(s.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn orthogonal_rows_and_analytic_cosine() {
        let z = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let s = pairwise_cosine(&z, &z).unwrap().values;
        assert_eq!(s.get(0, 1), 0.0);
        let a = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let b = m(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let s = pairwise_cosine(&a, &b).unwrap().values;
        assert!((s.get(0, 0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn combine_modes() {
        let lo = SimilarityMatrix {
            values: Tensor::full(&[1, 1], 0.2),
            source_pair: (0, 1),
        };
        let hi = SimilarityMatrix {
            values: Tensor::full(&[1, 1], 0.8),
            source_pair: (0, 2),
        };
        let both = [lo.clone(), hi.clone()];
        assert_eq!(
            combine_similarities(&both, CompareMode::Minor)
                .unwrap()
                .item(),
            0.2
        );
        assert_eq!(
            combine_similarities(&both, CompareMode::Major)
                .unwrap()
                .item(),
            0.8
        );
        assert_eq!(
            combine_similarities(&both, CompareMode::Mean)
                .unwrap()
                .item(),
            0.5
        );
        let same = [lo.clone(), lo.clone()];
        for mode in CompareMode::ALL {
            assert_eq!(combine_similarities(&same, mode).unwrap(), lo.values);
        }
        assert!(combine_similarities(&[], CompareMode::Minor).is_err());
    }

    #[test]
    fn negative_similarity_falls_back_to_uniform() {
        let z = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let other = m(&[&[-1.0, 0.0], &[0.0, -1.0]]);
        let p = decouple(&z, &[other], CompareMode::Minor).unwrap();
        assert_eq!(p.w_common, Tensor::full(&[2, 2], 0.5));
        assert_eq!(p.w_specific, Tensor::full(&[2, 2], 0.5));
    }

    #[test]
    fn hand_case_matches_frozen_values() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let z = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let other = m(&[&[1.0, 0.0], &[h, h]]);
        let p = decouple(&z, &[other], CompareMode::Minor).unwrap();
        let wc = m(&[&[0.585786437626905, 0.4142135623730951], &[0.0, 1.0]]);
        let ws = m(&[&[0.0, 1.0], &[0.7734590803390136, 0.22654091966098638]]);
        assert!(p.w_common.max_abs_diff(&wc) < 1e-12);
        assert!(p.w_specific.max_abs_diff(&ws) < 1e-12);
        assert!(p.common.max_abs_diff(&wc) < 1e-12);
        assert!(p.specific.max_abs_diff(&ws) < 1e-12);
    }

    #[test]
    fn errors() {
        let z = Tensor::zeros(&[2, 2]);
        assert!(decouple(&z, &[], CompareMode::Minor).is_err());
        assert!(decouple(&z, &[Tensor::zeros(&[3, 2])], CompareMode::Minor).is_err());
        assert!(pairwise_cosine(&z, &Tensor::zeros(&[2, 3])).is_err());
    }
}
