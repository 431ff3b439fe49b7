//! Datasets: MMF feature files, the JSON manifest, and the synthetic generator.

pub mod manifest;
pub mod mmf;
pub mod synthetic;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{MmclError, Result};
use crate::mining::{class_index, Task};

pub use manifest::{load_dataset, save_dataset, DatasetManifest};
pub use synthetic::{generate_synthetic, Segment, SyntheticData, SyntheticSpec};

/// Input channel. Index order is vision, audio, text throughout the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "v")]
    Vision,
    #[serde(rename = "a")]
    Audio,
    #[serde(rename = "t")]
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Vision, Modality::Audio, Modality::Text];

    pub fn index(self) -> usize {
        match self {
            Modality::Vision => 0,
            Modality::Audio => 1,
            Modality::Text => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Modality::ALL.get(i).copied()
    }

    /// Single upper-case letter: `V`, `A` or `T`.
    pub fn letter(self) -> char {
        match self {
            Modality::Vision => 'V',
            Modality::Audio => 'A',
            Modality::Text => 'T',
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Modality::Vision => "v",
            Modality::Audio => "a",
            Modality::Text => "t",
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'V' => Some(Modality::Vision),
            'A' => Some(Modality::Audio),
            'T' => Some(Modality::Text),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// One utterance: three aligned `L × d_m` feature sequences and a label.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Real-valued target, or the class index for classification.
    pub label: f64,
    pub features: [Tensor; 3],
}

impl Sample {
    pub fn feature(&self, m: Modality) -> &Tensor {
        &self.features[m.index()]
    }

    pub fn length(&self) -> usize {
        self.features[0].rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub dims: [usize; 3],
    pub length: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn find(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Checks one sample against the declared dims, length and task.
    pub fn check_sample(&self, s: &Sample) -> std::result::Result<(), String> {
        for m in Modality::ALL {
            let f = s.feature(m);
            if f.rows() != self.length {
                return Err(format!(
                    "modality {} has length {}, expected {}",
                    m.key(),
                    f.rows(),
                    self.length
                ));
            }
            if f.cols() != self.dims[m.index()] {
                return Err(format!(
                    "modality {} has width {}, expected {}",
                    m.key(),
                    f.cols(),
                    self.dims[m.index()]
                ));
            }
            if !f.is_finite() {
                return Err(format!("modality {} has non-finite values", m.key()));
            }
        }
        if !s.label.is_finite() {
            return Err(format!("label {} is not finite", s.label));
        }
        if let Task::Classification { num_classes } = self.task {
            class_index(s.label, num_classes).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    /// Validates every sample, collecting all failures with their ids.
    pub fn validate(&self) -> Result<()> {
        self.task
            .validate()
            .map_err(|e| MmclError::Data(e.to_string()))?;
        let problems: Vec<String> = self
            .samples
            .iter()
            .filter_map(|s| {
                self.check_sample(s)
                    .err()
                    .map(|e| format!("sample '{}': {}", s.id, e))
            })
            .collect();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(MmclError::Data(problems.join("; ")))
        }
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            task: self.task,
            dims: self.dims,
            length: self.length,
            samples,
        }
    }

    /// Seeded shuffle into `(train, validation)`; `valid_fraction` of the
    /// samples (rounded, at least one when possible) go to validation.
    pub fn split(&self, valid_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut n_valid = (self.len() as f64 * valid_fraction).round() as usize;
        if valid_fraction > 0.0 && n_valid == 0 && self.len() > 1 {
            n_valid = 1;
        }
        let n_valid = n_valid.min(self.len());
        let (valid, train) = idx.split_at(n_valid);
        let pick = |ids: &[usize]| ids.iter().map(|&i| self.samples[i].clone()).collect();
        (
            self.with_samples(pick(train)),
            self.with_samples(pick(valid)),
        )
    }
}
