//! Prediction metrics, the JSON metrics report, and information gain rates.

pub mod infogain;
pub mod metrics;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::mining::{class_index, Task};
use crate::model::MmclModel;

pub use infogain::{
    entropy, info_gain, info_gain_matrix, info_gain_protocol, info_gain_rate, train_probe,
    GainEntry, GainMatrix, InfoGainReport, Probe, ProbeConfig,
};
pub use metrics::{
    acc7_class, argmax, classification_metrics, classification_metrics_from_predictions,
    regression_metrics, regression_metrics_with, BinaryRule, ClassStats, ClassificationMetrics,
    RegressionMetrics,
};

/// Task-dependent metric report with fixed key names. Keys that do not
/// apply to the task are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub pearson: Option<f64>,
    pub acc2: Option<f64>,
    pub acc7: Option<f64>,
    /// Weighted binary F1 (regression) or macro F1 (classification).
    pub f1: Option<f64>,
    pub per_class: Option<Vec<ClassStats>>,
    pub info_gain: Option<InfoGainReport>,
    /// Overall accuracy for classification.
    pub accuracy: Option<f64>,
    pub pearson_degenerate: bool,
    pub count: usize,
}

impl MetricsReport {
    pub fn from_regression(m: &RegressionMetrics) -> Self {
        MetricsReport {
            mae: Some(m.mae),
            rmse: Some(m.rmse),
            pearson: Some(m.pearson),
            acc2: Some(m.acc2),
            acc7: Some(m.acc7),
            f1: Some(m.f1),
            per_class: None,
            info_gain: None,
            accuracy: None,
            pearson_degenerate: m.pearson_degenerate,
            count: m.count,
        }
    }

    pub fn from_classification(m: &ClassificationMetrics) -> Self {
        MetricsReport {
            mae: None,
            rmse: None,
            pearson: None,
            acc2: None,
            acc7: None,
            f1: Some(m.macro_f1),
            per_class: Some(m.per_class.clone()),
            info_gain: None,
            accuracy: Some(m.accuracy),
            pearson_degenerate: false,
            count: m.count,
        }
    }
}

/// Scores `model` on every sample of `data`.
pub fn evaluate(model: &MmclModel, data: &Dataset, rule: BinaryRule) -> Result<MetricsReport> {
    let preds = model.predict_all(&data.samples)?;
    match data.task {
        Task::Regression => {
            let p: Vec<f64> = preds.iter().map(|v| v[0]).collect();
            Ok(MetricsReport::from_regression(&regression_metrics_with(
                &p,
                &data.labels(),
                rule,
            )?))
        }
        Task::Classification { num_classes } => {
            let labels = data
                .samples
                .iter()
                .map(|s| class_index(s.label, num_classes))
                .collect::<Result<Vec<_>>>()?;
            Ok(MetricsReport::from_classification(&classification_metrics(
                &preds,
                &labels,
                num_classes,
            )?))
        }
    }
}
