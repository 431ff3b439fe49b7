//! Central finite-difference checks against [`Tape::backward`].

use super::params::{ParamGroup, ParamStore};
use super::tape::{Bindings, Tape, Var};
use super::Tensor;
use crate::error::{MmclError, Result};

/// Default perturbation for 64-bit checks.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Entries whose left and right difference quotients disagree by more than
/// this (relative) are treated as sitting on a kink and skipped.
const KINK_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Entries skipped because the function is not differentiable there.
    pub excluded: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport {
            max_relative_error: 0.0,
            checked: 0,
            excluded: 0,
        }
    }

    fn record(&mut self, analytic: f64, minus: f64, center: f64, plus: f64, eps: f64) {
        let forward = (plus - center) / eps;
        let backward = (center - minus) / eps;
        let scale = 1.0f64.max(forward.abs()).max(backward.abs());
        if (forward - backward).abs() > KINK_TOLERANCE * scale {
            self.excluded += 1;
            return;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs());
        self.max_relative_error = self.max_relative_error.max(err);
        self.checked += 1;
    }
}

fn eval_scalar(tape: &Tape, out: Var) -> Result<f64> {
    let t = tape.value(out);
    if !t.is_scalar() {
        return Err(MmclError::NotScalar(t.shape().to_vec()));
    }
    let v = t.item();
    if !v.is_finite() {
        return Err(MmclError::NonFinite("grad_check: function value".into()));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of `f` with respect to each of `inputs`
/// against central differences.
///
/// ```
/// use mmcl::diffcore::{grad_check, Tape, Tensor};
///
/// let x = Tensor::from_rows(&[[0.3, -1.2], [2.0, 0.7]]).unwrap();
/// let report = grad_check(
///     |tape: &mut Tape, v: &[_]| {
///         let s = tape.sigmoid(v[0]);
///         Ok(tape.sum_all(s))
///     },
///     &[x],
///     1e-6,
/// )
/// .unwrap();
/// assert!(report.max_relative_error < 1e-8);
/// ```
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(MmclError::Invalid(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if let Some(i) = inputs.iter().position(|t| !t.is_finite()) {
        return Err(MmclError::NonFinite(format!("grad_check: input {i}")));
    }
    let run = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.input(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = run(inputs)?;
    let center = eval_scalar(&tape, out)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();

    let mut report = GradCheckReport::empty();
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let base = input.data()[j];
            probe[i].data_mut()[j] = base + eps;
            let (t, _, o) = run(&probe)?;
            let plus = eval_scalar(&t, o)?;
            probe[i].data_mut()[j] = base - eps;
            let (t, _, o) = run(&probe)?;
            let minus = eval_scalar(&t, o)?;
            probe[i].data_mut()[j] = base;
            report.record(analytic[i].data()[j], minus, center, plus, eps);
        }
    }
    Ok(report)
}

/// Same check, but with respect to the entries of a [`ParamStore`].
/// `include` picks which groups are perturbed.
pub fn grad_check_params<F>(
    store: &ParamStore,
    f: F,
    eps: f64,
    include: impl Fn(ParamGroup) -> bool,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    let run = |s: &ParamStore| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let b = tape.bind(s);
        let out = f(&mut tape, &b)?;
        Ok((tape, out))
    };
    let (tape, out) = run(store)?;
    let center = eval_scalar(&tape, out)?;
    let grads = tape.backward(out)?.params(&tape);

    let mut report = GradCheckReport::empty();
    let mut probe = store.clone();
    for (id, p) in store.iter() {
        if !include(p.group) {
            continue;
        }
        let zeros = Tensor::zeros(p.value.shape());
        let analytic = grads.get(id).unwrap_or(&zeros);
        for j in 0..p.value.len() {
            let base = p.value.data()[j];
            probe.get_mut(id).data_mut()[j] = base + eps;
            let (t, o) = run(&probe)?;
            let plus = eval_scalar(&t, o)?;
            probe.get_mut(id).data_mut()[j] = base - eps;
            let (t, o) = run(&probe)?;
            let minus = eval_scalar(&t, o)?;
            probe.get_mut(id).data_mut()[j] = base;
            report.record(analytic.data()[j], minus, center, plus, eps);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_map_is_exact() {
        let x = Tensor::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        let w = Tensor::from_rows(&[[1.0, 2.0], [-0.5, 0.1], [0.3, 0.3]]).unwrap();
        let b = Tensor::row_vector(&[0.2, -0.4]);
        let r = grad_check(
            |t: &mut Tape, v: &[Var]| {
                let y = t.affine(v[0], v[1], v[2])?;
                Ok(t.sum_all(y))
            },
            &[x, w, b],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-9, "{r:?}");
        assert_eq!(r.excluded, 0);
    }

    #[test]
    fn relu_kink_is_excluded() {
        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.relu(v[0]);
            Ok(t.sum_all(y))
        };
        let at_kink = grad_check(f, &[Tensor::scalar(0.0)], DEFAULT_EPS).unwrap();
        assert_eq!((at_kink.checked, at_kink.excluded), (0, 1));
        let off_kink = grad_check(f, &[Tensor::scalar(0.1)], DEFAULT_EPS).unwrap();
        assert_eq!(off_kink.checked, 1);
        assert!(off_kink.max_relative_error < 1e-9);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let r = grad_check(
            |t: &mut Tape, v: &[Var]| {
                let y = t.ln(v[0]);
                Ok(t.sum_all(y))
            },
            &[Tensor::scalar(0.0)],
            DEFAULT_EPS,
        );
        assert!(matches!(r, Err(MmclError::NonFinite(_))));
    }
}
