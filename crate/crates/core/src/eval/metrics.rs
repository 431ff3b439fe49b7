use serde::{Deserialize, Serialize};

use crate::error::{MmclError, Result};

/// How real-valued scores are split into the two classes behind Acc2 and F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BinaryRule {
    /// Positive iff `> 0`; zeros count as negative.
    #[default]
    Positive,
    /// Positive iff `> 0`, and samples whose label is exactly 0 are dropped.
    NonZero,
    /// Positive iff `>= threshold` (e.g. 9 for PHQ-9 depression screening).
    AtLeast { threshold: f64 },
}

impl BinaryRule {
    fn positive(&self, x: f64) -> bool {
        match self {
            BinaryRule::Positive | BinaryRule::NonZero => x > 0.0,
            BinaryRule::AtLeast { threshold } => x >= *threshold,
        }
    }
}

/// Regression-side report. `acc7` is only meaningful on the [-3, 3] scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub pearson: f64,
    /// Set when either series has zero variance and `pearson` was forced to 0.
    pub pearson_degenerate: bool,
    pub acc2: f64,
    pub acc7: f64,
    pub f1: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: usize,
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// No true and no predicted samples of this class; `f1` is reported as 0.
    pub zero_support: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_acc: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassStats>,
    pub count: usize,
}

fn check_lengths(preds: usize, labels: usize) -> Result<()> {
    if preds != labels {
        return Err(MmclError::Invalid(format!(
            "{preds} predictions for {labels} labels"
        )));
    }
    if preds == 0 {
        return Err(MmclError::Invalid(
            "metrics need at least one sample".into(),
        ));
    }
    Ok(())
}

pub fn mae(preds: &[f64], labels: &[f64]) -> f64 {
    preds
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l).abs())
        .sum::<f64>()
        / preds.len() as f64
}

pub fn rmse(preds: &[f64], labels: &[f64]) -> f64 {
    (preds
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l).powi(2))
        .sum::<f64>()
        / preds.len() as f64)
        .sqrt()
}

/// Pearson correlation; `(0, true)` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> (f64, bool) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return (0.0, true);
    }
    ((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0), false)
}

/// Seven-way class on the sentiment scale: nearest integer (halves away
/// from zero), clamped to [-3, 3].
pub fn acc7_class(x: f64) -> i32 {
    x.round().clamp(-3.0, 3.0) as i32
}

/// Weighted (by support) binary F1 over the negative and positive classes.
pub fn weighted_binary_f1(pred_pos: &[bool], label_pos: &[bool]) -> f64 {
    let n = label_pos.len() as f64;
    let mut total = 0.0;
    for class in [false, true] {
        let tp = pred_pos
            .iter()
            .zip(label_pos)
            .filter(|(p, l)| **p == class && **l == class)
            .count() as f64;
        let fp = pred_pos
            .iter()
            .zip(label_pos)
            .filter(|(p, l)| **p == class && **l != class)
            .count() as f64;
        let fn_ = pred_pos
            .iter()
            .zip(label_pos)
            .filter(|(p, l)| **p != class && **l == class)
            .count() as f64;
        let support = tp + fn_;
        let f1 = if 2.0 * tp + fp + fn_ == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        total += f1 * support / n;
    }
    total
}

pub fn regression_metrics(preds: &[f64], labels: &[f64]) -> Result<RegressionMetrics> {
    regression_metrics_with(preds, labels, BinaryRule::Positive)
}

pub fn regression_metrics_with(
    preds: &[f64],
    labels: &[f64],
    rule: BinaryRule,
) -> Result<RegressionMetrics> {
    check_lengths(preds.len(), labels.len())?;
    if preds.iter().chain(labels).any(|v| !v.is_finite()) {
        return Err(MmclError::NonFinite("regression metrics input".into()));
    }
    let (pearson, pearson_degenerate) = pearson(preds, labels);
    let acc7 = preds
        .iter()
        .zip(labels)
        .filter(|(p, l)| acc7_class(**p) == acc7_class(**l))
        .count() as f64
        / preds.len() as f64;

    let kept: Vec<(f64, f64)> = preds
        .iter()
        .zip(labels)
        .filter(|(_, l)| !(matches!(rule, BinaryRule::NonZero) && **l == 0.0))
        .map(|(p, l)| (*p, *l))
        .collect();
    let (acc2, f1) = if kept.is_empty() {
        (0.0, 0.0)
    } else {
        let pp: Vec<bool> = kept.iter().map(|(p, _)| rule.positive(*p)).collect();
        let lp: Vec<bool> = kept.iter().map(|(_, l)| rule.positive(*l)).collect();
        let acc2 = pp.iter().zip(&lp).filter(|(a, b)| a == b).count() as f64 / kept.len() as f64;
        (acc2, weighted_binary_f1(&pp, &lp))
    };
    Ok(RegressionMetrics {
        mae: mae(preds, labels),
        rmse: rmse(preds, labels),
        pearson,
        pearson_degenerate,
        acc2,
        acc7,
        f1,
        count: preds.len(),
    })
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-class one-vs-rest accuracy and F1 from argmax predictions.
pub fn classification_metrics(
    logits: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
) -> Result<ClassificationMetrics> {
    check_lengths(logits.len(), labels.len())?;
    if let Some(l) = logits.iter().find(|l| l.len() != num_classes) {
        return Err(MmclError::Invalid(format!(
            "logit vector of width {} for {} classes",
            l.len(),
            num_classes
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(MmclError::Invalid(format!(
            "label {bad} outside [0, {num_classes})"
        )));
    }
    let preds: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
    classification_metrics_from_predictions(&preds, labels, num_classes)
}

pub fn classification_metrics_from_predictions(
    preds: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<ClassificationMetrics> {
    check_lengths(preds.len(), labels.len())?;
    let n = labels.len() as f64;
    let per_class: Vec<ClassStats> = (0..num_classes)
        .map(|c| {
            let tp = preds
                .iter()
                .zip(labels)
                .filter(|(p, l)| **p == c && **l == c)
                .count();
            let fp = preds
                .iter()
                .zip(labels)
                .filter(|(p, l)| **p == c && **l != c)
                .count();
            let fn_ = preds
                .iter()
                .zip(labels)
                .filter(|(p, l)| **p != c && **l == c)
                .count();
            let tn = labels.len() - tp - fp - fn_;
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            ClassStats {
                class: c,
                acc: (tp + tn) as f64 / n,
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
                support: tp + fn_,
                zero_support: tp + fp + fn_ == 0,
            }
        })
        .collect();
    let accuracy = preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / n;
    let k = num_classes as f64;
    Ok(ClassificationMetrics {
        accuracy,
        macro_acc: per_class.iter().map(|c| c.acc).sum::<f64>() / k,
        macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
        per_class,
        count: labels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_regression() {
        let y = [-2.2, 0.4, 1.0, 3.0, -0.5];
        let m = regression_metrics(&y, &y).unwrap();
        assert_eq!(m.mae, 0.0);
        assert!((m.pearson - 1.0).abs() < 1e-12);
        assert_eq!((m.acc2, m.acc7, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn acc7_rounding_and_clamp() {
        assert_eq!(acc7_class(3.7), 3);
        assert_eq!(acc7_class(2.4), 2);
        assert_eq!(acc7_class(-2.5), -3);
        assert_eq!(acc7_class(0.5), 1);
        assert_eq!(acc7_class(-9.0), -3);
    }

    #[test]
    fn zero_variance_pearson_is_flagged() {
        let m = regression_metrics(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(m.pearson, 0.0);
        assert!(m.pearson_degenerate);
    }

    #[test]
    fn binary_rules() {
        let preds = [1.0, -1.0, 0.5];
        let labels = [1.0, 0.0, 0.0];
        let all = regression_metrics(&preds, &labels).unwrap();
        assert!((all.acc2 - 2.0 / 3.0).abs() < 1e-15);
        let nz = regression_metrics_with(&preds, &labels, BinaryRule::NonZero).unwrap();
        assert_eq!(nz.acc2, 1.0);
        let phq = regression_metrics_with(
            &[12.0, 3.0],
            &[9.0, 8.0],
            BinaryRule::AtLeast { threshold: 9.0 },
        )
        .unwrap();
        assert_eq!(phq.acc2, 1.0);
    }

    #[test]
    fn input_errors() {
        assert!(regression_metrics(&[], &[]).is_err());
        assert!(regression_metrics(&[1.0], &[1.0, 2.0]).is_err());
        assert!(classification_metrics(&[vec![0.0, 1.0]], &[2], 2).is_err());
    }

    #[test]
    fn single_class_present() {
        let logits = vec![vec![5.0, 0.0, 0.0]; 3];
        let m = classification_metrics(&logits, &[0, 0, 0], 3).unwrap();
        assert_eq!(m.per_class[0].f1, 1.0);
        assert_eq!(m.per_class[1].f1, 0.0);
        assert!(m.per_class[1].zero_support && m.per_class[2].zero_support);
        assert!(!m.per_class[0].zero_support);
    }
}
