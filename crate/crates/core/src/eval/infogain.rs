//! Information gain rate between feature families.
//!
//! A linear softmax probe is trained on each family and on each pair of
//! families; `H` is the mean entropy (bits) of the probe's predicted
//! distributions over the dataset, and the gain of `cond` relative to
//! `base` is `(H(base) - H(base | cond)) / H(base)`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Modality};
use crate::diffcore::{
    adam_step, xavier_uniform, AdamHyper, AdamState, Axis, ParamGroup, ParamStore, Tape, Tensor,
};
use crate::error::{MmclError, Result};
use crate::mining::{class_index, Task};
use crate::model::MmclModel;

/// Tolerance on the probability sum accepted by [`entropy`].
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Base-2 entropy with `0·log 0 = 0`.
///
/// ```
/// use mmcl::eval::entropy;
/// assert_eq!(entropy(&[0.25; 4]).unwrap(), 2.0);
/// assert_eq!(entropy(&[0.0, 1.0]).unwrap(), 0.0);
/// ```
pub fn entropy(prob: &[f64]) -> Result<f64> {
    if prob.is_empty() {
        return Err(MmclError::Invalid(
            "entropy of an empty distribution".into(),
        ));
    }
    if let Some(p) = prob.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(MmclError::Invalid(format!(
            "probability {p} is negative or non-finite"
        )));
    }
    let total: f64 = prob.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(MmclError::Invalid(format!("probabilities sum to {total}")));
    }
    Ok(prob
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.log2())
        .sum::<f64>()
        .max(0.0))
}

/// `(h_base - h_cond) / h_base`, or `None` when `h_base` is zero.
pub fn info_gain_rate(h_base: f64, h_cond: f64) -> Option<f64> {
    if h_base > 0.0 {
        Some((h_base - h_cond) / h_base)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 100,
            batch_size: 32,
            lr: 0.01,
            seed: 0,
        }
    }
}

/// Trained affine softmax classifier over standardized features.
#[derive(Clone, Debug)]
pub struct Probe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: Tensor,
    b: Tensor,
}

fn standardize(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let f = rows[0].len();
    let mut mean = vec![0.0; f];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; f];
    for r in rows {
        for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let scale = scale
        .into_iter()
        .map(|v| if v > 1e-24 { 1.0 / v.sqrt() } else { 0.0 })
        .collect();
    (mean, scale)
}

impl Probe {
    fn matrix(&self, rows: &[&Vec<f64>]) -> Result<Tensor> {
        let f = self.mean.len();
        let mut data = Vec::with_capacity(rows.len() * f);
        for r in rows {
            if r.len() != f {
                return Err(MmclError::shape(
                    "probe",
                    format!("feature vector of width {} for probe width {}", r.len(), f),
                ));
            }
            data.extend(
                r.iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .map(|((v, m), s)| (v - m) * s),
            );
        }
        Tensor::matrix(rows.len(), f, data)
    }

    /// Predicted class distributions, one row per input.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&Vec<f64>> = rows.iter().collect();
        let x = self.matrix(&refs)?;
        let mut tape = Tape::new();
        let (x, w, b) = (
            tape.constant(x),
            tape.constant(self.w.clone()),
            tape.constant(self.b.clone()),
        );
        let logits = tape.affine(x, w, b)?;
        let p = tape.softmax(logits, Axis::Cols)?;
        let p = tape.value(p);
        Ok((0..p.rows()).map(|i| p.row(i).to_vec()).collect())
    }

    /// Mean entropy of the predicted distributions.
    pub fn mean_entropy(&self, rows: &[Vec<f64>]) -> Result<f64> {
        let probs = self.predict(rows)?;
        let mut total = 0.0;
        for p in &probs {
            // renormalize away rounding in the softmax
            let s: f64 = p.iter().sum();
            let p: Vec<f64> = p.iter().map(|v| v / s).collect();
            total += entropy(&p)?;
        }
        Ok(total / probs.len() as f64)
    }
}

/// Trains a linear softmax probe with cross-entropy and Adam.
pub fn train_probe(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<Probe> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(MmclError::Invalid(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let f = features[0].len();
    if f == 0 || features.iter().any(|r| r.len() != f) {
        return Err(MmclError::shape(
            "probe",
            "feature rows must share a positive width",
        ));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(MmclError::Invalid(format!(
            "label {l} outside [0, {num_classes})"
        )));
    }
    if cfg.batch_size == 0 {
        return Err(MmclError::Config(
            "probe batch_size must be at least 1".into(),
        ));
    }
    let (mean, scale) = standardize(features);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let wid = store.add(
        "probe.w",
        ParamGroup::Probe,
        xavier_uniform(f, num_classes, &mut rng),
    );
    let bid = store.add(
        "probe.b",
        ParamGroup::Probe,
        Tensor::zeros(&[1, num_classes]),
    );
    let mut adam = AdamState::new(
        &store,
        AdamHyper {
            lr: cfg.lr,
            ..AdamHyper::default()
        },
    );
    let mut probe = Probe {
        mean,
        scale,
        w: store.get(wid).clone(),
        b: store.get(bid).clone(),
    };

    let mut order: Vec<usize> = (0..features.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&Vec<f64>> = chunk.iter().map(|&i| &features[i]).collect();
            let mut onehot = Tensor::zeros(&[chunk.len(), num_classes]);
            for (r, &i) in chunk.iter().enumerate() {
                onehot.set(r, labels[i], 1.0);
            }
            let mut tape = Tape::new();
            let p = tape.bind(&store);
            let x = tape.constant(probe.matrix(&rows)?);
            let y = tape.constant(onehot);
            let logits = tape.affine(x, p[wid], p[bid])?;
            let logp = tape.log_softmax(logits, Axis::Cols)?;
            let picked = tape.mul(logp, y)?;
            let total = tape.sum_all(picked);
            let loss = tape.scalar_mul(total, -1.0 / chunk.len() as f64);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(MmclError::NonFinite(format!(
                    "probe loss {value} at epoch {epoch}"
                )));
            }
            let grads = tape.backward(loss)?.params(&tape);
            adam_step(&mut store, &grads, &mut adam)?;
        }
    }
    probe.w = store.get(wid).clone();
    probe.b = store.get(bid).clone();
    Ok(probe)
}

/// Mean probe entropy of one feature family.
pub fn family_entropy(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    train_probe(features, labels, num_classes, cfg)?.mean_entropy(features)
}

/// Row-wise concatenation of two feature families.
pub fn concat_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if a.len() != b.len() {
        return Err(MmclError::Invalid(format!(
            "{} rows vs {} rows",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().chain(y).copied().collect())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainEntry {
    pub h_base: f64,
    pub h_cond: f64,
    /// `None` when `h_base` is zero and the rate is undefined.
    pub g: Option<f64>,
}

/// Gain of `cond` relative to `base`.
pub fn info_gain(
    base: &[Vec<f64>],
    cond: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<GainEntry> {
    let h_base = family_entropy(base, labels, num_classes, cfg)?;
    let h_cond = family_entropy(&concat_features(base, cond)?, labels, num_classes, cfg)?;
    Ok(GainEntry {
        h_base,
        h_cond,
        g: info_gain_rate(h_base, h_cond),
    })
}

/// Gains over every ordered pair of named families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainMatrix {
    /// `H` per family, keyed by name.
    pub entropy: BTreeMap<String, f64>,
    /// `g[base][cond]`.
    pub g: BTreeMap<String, BTreeMap<String, Option<f64>>>,
}

pub fn info_gain_matrix(
    families: &[(String, Vec<Vec<f64>>)],
    labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<GainMatrix> {
    let mut entropy = BTreeMap::new();
    for (name, feats) in families {
        entropy.insert(
            name.clone(),
            family_entropy(feats, labels, num_classes, cfg)?,
        );
    }
    let mut g = BTreeMap::new();
    for (base, fb) in families {
        let mut row = BTreeMap::new();
        for (cond, fc) in families {
            let h_cond = family_entropy(&concat_features(fb, fc)?, labels, num_classes, cfg)?;
            row.insert(cond.clone(), info_gain_rate(entropy[base], h_cond));
        }
        g.insert(base.clone(), row);
    }
    Ok(GainMatrix { entropy, g })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoGainReport {
    /// Families built from pooled `Z_s`.
    pub specific: GainMatrix,
    /// Families built from pooled `Z̃_s`.
    pub complementary: GainMatrix,
    pub probe: ProbeConfig,
}

fn mean_rows(t: &Tensor) -> Vec<f64> {
    let (r, c) = (t.rows(), t.cols());
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(t.row(i)) {
            *o += v / r as f64;
        }
    }
    out
}

/// Runs the probes on pooled specific and complementary features of a
/// trained model over a classification dataset.
pub fn info_gain_protocol(
    model: &MmclModel,
    data: &Dataset,
    cfg: &ProbeConfig,
) -> Result<InfoGainReport> {
    let Task::Classification { num_classes } = data.task else {
        return Err(MmclError::Data(
            "information gain needs a classification dataset".into(),
        ));
    };
    if data.is_empty() {
        return Err(MmclError::Data(
            "information gain needs a non-empty dataset".into(),
        ));
    }
    let active: Vec<Modality> = model.branches.iter().map(|b| b.modality).collect();
    if !model.config.ablation.uses_specific() {
        return Err(MmclError::Invalid(
            "model does not compute specific features".into(),
        ));
    }
    let mut specific: Vec<Vec<Vec<f64>>> = vec![Vec::new(); active.len()];
    let mut complementary: Vec<Vec<Vec<f64>>> = vec![Vec::new(); active.len()];
    let mut labels = Vec::with_capacity(data.len());
    for s in &data.samples {
        labels.push(class_index(s.label, num_classes)?);
        let trace = model.forward(s)?;
        for (i, m) in trace.modalities.iter().enumerate() {
            specific[i].push(mean_rows(&m.specific));
            complementary[i].push(mean_rows(m.complementary.as_ref().unwrap_or(&m.specific)));
        }
    }
    let named = |fams: Vec<Vec<Vec<f64>>>| -> Vec<(String, Vec<Vec<f64>>)> {
        active
            .iter()
            .zip(fams)
            .map(|(m, f)| (m.letter().to_string(), f))
            .collect()
    };
    Ok(InfoGainReport {
        specific: info_gain_matrix(&named(specific), &labels, num_classes, cfg)?,
        complementary: info_gain_matrix(&named(complementary), &labels, num_classes, cfg)?,
        probe: cfg.clone(),
    })
}
