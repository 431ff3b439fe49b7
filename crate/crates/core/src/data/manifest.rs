//! JSON manifest describing a dataset whose features live in MMF files.
//!
//! ```json
//! {
//!   "task": "regression",
//!   "num_classes": null,
//!   "dims": { "v": 6, "a": 6, "t": 6 },
//!   "length": 9,
//!   "samples": [
//!     { "id": "s0000", "label": -0.41, "v": "features/s0000_v.mmf", "a": "...", "t": "..." }
//!   ]
//! }
//! ```
//!
//! Feature paths are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mmf::{self, Dtype};
use super::{Dataset, Modality, Sample};
use crate::error::{MmclError, Result};
use crate::mining::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub v: usize,
    pub a: usize,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub label: f64,
    pub v: String,
    pub a: String,
    pub t: String,
}

impl SampleRecord {
    fn path(&self, m: Modality) -> &str {
        match m {
            Modality::Vision => &self.v,
            Modality::Audio => &self.a,
            Modality::Text => &self.t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub task: TaskKind,
    #[serde(default)]
    pub num_classes: Option<usize>,
    pub dims: Dims,
    pub length: usize,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn task(&self) -> Result<Task> {
        match (self.task, self.num_classes) {
            (TaskKind::Regression, _) => Ok(Task::Regression),
            (TaskKind::Classification, Some(c)) if c >= 2 => {
                Ok(Task::Classification { num_classes: c })
            }
            (TaskKind::Classification, other) => Err(MmclError::Data(format!(
                "classification manifest needs num_classes >= 2, got {other:?}"
            ))),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.dims.v, self.dims.a, self.dims.t]
    }
}

/// Reads a manifest and every feature file it references. All per-sample
/// problems are gathered into one error that names the sample ids.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| MmclError::io(manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| MmclError::Data(format!("{}: {}", manifest_path.display(), e)))?;
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let task = manifest.task()?;
    let mut dataset = Dataset {
        task,
        dims: manifest.dims(),
        length: manifest.length,
        samples: Vec::new(),
    };

    let mut problems = Vec::new();
    for rec in &manifest.samples {
        let mut features = Vec::with_capacity(3);
        let mut failed = false;
        for m in Modality::ALL {
            match mmf::read_matrix(base.join(rec.path(m))) {
                Ok(t) => features.push(t),
                Err(e) => {
                    problems.push(format!("sample '{}': modality {}: {}", rec.id, m.key(), e));
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            continue;
        }
        let features: [_; 3] = features.try_into().expect("three modalities");
        let sample = Sample {
            id: rec.id.clone(),
            label: rec.label,
            features,
        };
        match dataset.check_sample(&sample) {
            Ok(()) => dataset.samples.push(sample),
            Err(e) => problems.push(format!("sample '{}': {}", rec.id, e)),
        }
    }
    if !problems.is_empty() {
        return Err(MmclError::Data(problems.join("; ")));
    }
    if dataset.is_empty() {
        return Err(MmclError::Data(format!(
            "{}: no samples",
            manifest_path.display()
        )));
    }
    Ok(dataset)
}

/// Writes `dataset` as `manifest.json` plus `features/<id>_<m>.mmf` under `dir`.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>, dtype: Dtype) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| MmclError::io(&feat_dir, e))?;
    let mut samples = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let mut paths = Vec::with_capacity(3);
        for m in Modality::ALL {
            let rel = format!("features/{}_{}.mmf", s.id, m.key());
            mmf::write_matrix(dir.join(&rel), s.feature(m), dtype)?;
            paths.push(rel);
        }
        samples.push(SampleRecord {
            id: s.id.clone(),
            label: s.label,
            v: paths[0].clone(),
            a: paths[1].clone(),
            t: paths[2].clone(),
        });
    }
    let (task, num_classes) = match dataset.task {
        Task::Regression => (TaskKind::Regression, None),
        Task::Classification { num_classes } => (TaskKind::Classification, Some(num_classes)),
    };
    let manifest = DatasetManifest {
        task,
        num_classes,
        dims: Dims {
            v: dataset.dims[0],
            a: dataset.dims[1],
            t: dataset.dims[2],
        },
        length: dataset.length,
        samples,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| MmclError::io(&path, e))?;
    Ok(path)
}
