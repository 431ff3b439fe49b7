use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::decoupling::CompareMode;
use crate::error::{MmclError, Result};
use crate::mining::{RewardSpec, Task};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Concat,
    #[default]
    WeightedSum,
}

/// Which feature branches reach the fusion step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    #[default]
    Both,
    CommonOnly,
    SpecificOnly,
}

/// Module switches for ablation runs. The default is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub csd: bool,
    pub cce: bool,
    pub csm: bool,
    pub branches: Branches,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            csd: true,
            cce: true,
            csm: true,
            branches: Branches::Both,
        }
    }
}

impl Ablation {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn no_csd() -> Self {
        Ablation {
            csd: false,
            ..Self::default()
        }
    }

    pub fn no_cce() -> Self {
        Ablation {
            cce: false,
            ..Self::default()
        }
    }

    pub fn no_csm() -> Self {
        Ablation {
            csm: false,
            ..Self::default()
        }
    }

    pub fn common_only() -> Self {
        Ablation {
            branches: Branches::CommonOnly,
            ..Self::default()
        }
    }

    pub fn specific_only() -> Self {
        Ablation {
            branches: Branches::SpecificOnly,
            ..Self::default()
        }
    }

    pub fn uses_common(&self) -> bool {
        self.branches != Branches::SpecificOnly
    }

    pub fn uses_specific(&self) -> bool {
        self.branches != Branches::CommonOnly
    }

    /// Enhancement runs only when the common branch is fused.
    pub fn uses_cce(&self) -> bool {
        self.cce && self.uses_common()
    }

    /// Policies and critic run only when the specific branch is fused.
    pub fn uses_csm(&self) -> bool {
        self.csm && self.uses_specific()
    }
}

/// Subset of modalities fed to the model, written as letters (`"vat"`, `"tv"`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModalityMask(pub [bool; 3]);

impl Default for ModalityMask {
    fn default() -> Self {
        ModalityMask([true; 3])
    }
}

impl ModalityMask {
    pub fn contains(&self, m: Modality) -> bool {
        self.0[m.index()]
    }

    pub fn active(&self) -> Vec<Modality> {
        Modality::ALL
            .iter()
            .copied()
            .filter(|m| self.contains(*m))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

impl TryFrom<String> for ModalityMask {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        let mut mask = [false; 3];
        for c in s.chars() {
            let m = Modality::from_letter(c)
                .ok_or_else(|| format!("unknown modality letter '{c}' in \"{s}\""))?;
            mask[m.index()] = true;
        }
        if !mask.iter().any(|b| *b) {
            return Err("modality mask selects no modality".into());
        }
        Ok(ModalityMask(mask))
    }
}

impl std::str::FromStr for ModalityMask {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModalityMask::try_from(s.to_string())
    }
}

impl From<ModalityMask> for String {
    fn from(m: ModalityMask) -> String {
        m.to_string()
    }
}

impl fmt::Display for ModalityMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in self.active() {
            write!(f, "{}", m.letter())?;
        }
        Ok(())
    }
}

/// Everything needed to build and train a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmclConfig {
    /// Shared subspace width.
    pub d: usize,
    /// Hidden width of the enhancement feed-forward layer; `2d` when absent.
    pub d_ff: Option<usize>,
    pub enhance_heads: usize,
    /// Critic width; `d` when absent.
    pub critic_dim: Option<usize>,
    pub critic_heads: usize,
    pub compare_mode: CompareMode,
    pub fusion: FusionMode,
    pub task: Task,
    pub gamma: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub modalities: ModalityMask,
}

impl Default for MmclConfig {
    fn default() -> Self {
        MmclConfig {
            d: 256,
            d_ff: None,
            enhance_heads: 1,
            critic_dim: None,
            critic_heads: 8,
            compare_mode: CompareMode::Minor,
            fusion: FusionMode::WeightedSum,
            task: Task::Regression,
            gamma: 0.5,
            alpha1: 15.0,
            alpha2: 5.0,
            batch_size: 64,
            epochs: 200,
            lr: 1e-3,
            seed: 0,
            ablation: Ablation::default(),
            modalities: ModalityMask::default(),
        }
    }
}

impl MmclConfig {
    /// Sentiment regression defaults.
    pub fn msa() -> Self {
        Self::default()
    }

    /// Emotion recognition defaults: classification with the MER loss weights.
    pub fn mer(num_classes: usize) -> Self {
        MmclConfig {
            task: Task::Classification { num_classes },
            alpha1: 7.0,
            alpha2: 13.0,
            batch_size: 128,
            ..Self::default()
        }
    }

    /// Depression assessment defaults: regression, batch 128.
    pub fn mda() -> Self {
        MmclConfig {
            batch_size: 128,
            ..Self::default()
        }
    }

    pub fn d_ff(&self) -> usize {
        self.d_ff.unwrap_or(2 * self.d)
    }

    pub fn critic_dim(&self) -> usize {
        self.critic_dim.unwrap_or(self.d)
    }

    pub fn reward_spec(&self) -> RewardSpec {
        RewardSpec {
            task: self.task,
            gamma: self.gamma,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: MmclConfig =
            serde_json::from_str(text).map_err(|e| MmclError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MmclError::Config(m));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.d_ff() == 0 {
            return bad("d_ff must be positive".into());
        }
        if self.enhance_heads == 0 || !self.d.is_multiple_of(self.enhance_heads) {
            return bad(format!(
                "d = {} is not divisible by enhance_heads = {}",
                self.d, self.enhance_heads
            ));
        }
        if self.critic_heads == 0 || !self.critic_dim().is_multiple_of(self.critic_heads) {
            return bad(format!(
                "critic_dim = {} is not divisible by critic_heads = {}",
                self.critic_dim(),
                self.critic_heads
            ));
        }
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return bad(format!(
                "loss weights must be non-negative, got {} and {}",
                self.alpha1, self.alpha2
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be a non-negative number, got {}", self.lr));
        }
        if self.modalities.count() == 0 {
            return bad("modality mask selects no modality".into());
        }
        self.reward_spec().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_presets() {
        let c = MmclConfig::default();
        assert_eq!((c.d, c.gamma, c.alpha1, c.alpha2), (256, 0.5, 15.0, 5.0));
        assert_eq!(c.compare_mode, CompareMode::Minor);
        let mer = MmclConfig::mer(4);
        assert_eq!((mer.alpha1, mer.alpha2), (7.0, 13.0));
        mer.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = MmclConfig {
            d: 16,
            modalities: "tv".parse().unwrap(),
            ..MmclConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"modalities\":\"VT\""));
        assert_eq!(MmclConfig::from_json(&text).unwrap(), c);
        assert!(MmclConfig::from_json(r#"{"dd": 3}"#).is_err());
        assert!(MmclConfig::from_json(r#"{"ablation": {"csd": false, "typo": 1}}"#).is_err());
        let partial = MmclConfig::from_json(
            r#"{"d": 8, "critic_heads": 4, "task": {"kind": "classification", "num_classes": 3}}"#,
        )
        .unwrap();
        assert_eq!(partial.task, Task::Classification { num_classes: 3 });
    }

    #[test]
    fn invalid_configs() {
        assert!(MmclConfig {
            batch_size: 0,
            ..MmclConfig::default()
        }
        .validate()
        .is_err());
        assert!(MmclConfig {
            alpha2: -1.0,
            ..MmclConfig::default()
        }
        .validate()
        .is_err());
        assert!(MmclConfig {
            d: 12,
            ..MmclConfig::default()
        }
        .validate()
        .is_err());
        assert!("".parse::<ModalityMask>().is_err());
        assert!("vx".parse::<ModalityMask>().is_err());
    }
}
