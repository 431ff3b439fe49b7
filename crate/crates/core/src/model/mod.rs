//! The assembled model: projection, decoupling, enhancement and mining per
//! modality, fusion, temporal mean pooling and a prediction head.

pub mod checkpoint;
pub mod config;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Modality, Sample};
use crate::decoupling::{decouple_on, DecoupledPair, DecoupledVars};
use crate::diffcore::{
    xavier_uniform, Axis, Bindings, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var,
};
use crate::enhancement::EnhanceBlock;
use crate::error::{MmclError, Result};
use crate::mining::{apply_action_on, class_index, ActionVector, CriticModel, PolicyModel, Task};

pub use checkpoint::{checkpoint_keys, load_checkpoint, save_checkpoint};
pub use config::{Ablation, Branches, FusionMode, MmclConfig, ModalityMask};
pub use train::{
    batch_gradients, end_to_end_grad_check, mean_q, record_objectives, train, BatchGrads,
    BatchObjectives, BatchStats, EpochStats, TrainHistory, TrainOutcome, Trainer,
};

/// Per-timestep affine map `d_m → d`.
#[derive(Clone, Debug)]
pub struct Projection {
    pub w: ParamId,
    pub b: ParamId,
}

/// Parameters that belong to one active modality.
#[derive(Clone, Debug)]
pub struct ModalityBranch {
    pub modality: Modality,
    pub projection: Projection,
    pub enhance: Option<EnhanceBlock>,
    pub policy: Option<PolicyModel>,
}

#[derive(Clone, Debug)]
pub struct MmclModel {
    pub config: MmclConfig,
    pub input_dims: [usize; 3],
    pub store: ParamStore,
    pub branches: Vec<ModalityBranch>,
    /// Fusion logits, one per active modality (weighted-sum mode only).
    pub fusion: Option<ParamId>,
    pub head: Projection,
    /// Present during training; parameters are stored last in `store`.
    pub critic: Option<CriticModel>,
    critic_start: usize,
}

/// Tape handles for one modality of a recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModalityVars {
    pub modality: Modality,
    pub z: Var,
    pub decoupled: Option<DecoupledVars>,
    pub common: Var,
    pub specific: Var,
    pub enhanced: Option<Var>,
    pub action: Option<Var>,
    pub complementary: Option<Var>,
    pub block: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub modalities: Vec<ModalityVars>,
    pub fused: Var,
    pub pooled: Var,
    /// `1 × 1` for regression, `1 × C` logits for classification.
    pub prediction: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModalityTrace {
    pub modality: Modality,
    pub z: Tensor,
    pub decoupled: Option<DecoupledPair>,
    pub common: Tensor,
    pub specific: Tensor,
    /// `Z̃_c`; equals `common` when enhancement is disabled.
    pub enhanced: Option<Tensor>,
    pub action: Option<ActionVector>,
    /// `Z̃_s`; equals `specific` when mining is disabled.
    pub complementary: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub modalities: Vec<ModalityTrace>,
    pub fused: Tensor,
    pub prediction: Vec<f64>,
}

impl ForwardTrace {
    pub fn modality(&self, m: Modality) -> Option<&ModalityTrace> {
        self.modalities.iter().find(|t| t.modality == m)
    }
}

impl MmclModel {
    /// Builds a freshly initialized model, critic included when mining is on.
    pub fn new(config: MmclConfig, input_dims: [usize; 3]) -> Result<Self> {
        Self::build(config, input_dims, true)
    }

    pub(crate) fn build(
        config: MmclConfig,
        input_dims: [usize; 3],
        with_critic: bool,
    ) -> Result<Self> {
        config.validate()?;
        let active = config.modalities.active();
        for &m in &active {
            if input_dims[m.index()] == 0 {
                return Err(MmclError::Config(format!(
                    "modality {} has input width 0",
                    m.key()
                )));
            }
        }
        let d = config.d;
        let ab = config.ablation;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();

        let mut branches = Vec::with_capacity(active.len());
        for &m in &active {
            let key = m.key();
            let w = store.add(
                format!("proj.{key}.w"),
                ParamGroup::Projection,
                xavier_uniform(input_dims[m.index()], d, &mut rng),
            );
            let b = store.add(
                format!("proj.{key}.b"),
                ParamGroup::Projection,
                Tensor::zeros(&[1, d]),
            );
            let enhance = if ab.uses_cce() {
                Some(EnhanceBlock::new(
                    &mut store,
                    &format!("enhance.{key}"),
                    d,
                    config.d_ff(),
                    config.enhance_heads,
                    &mut rng,
                )?)
            } else {
                None
            };
            let policy = if ab.uses_csm() {
                Some(PolicyModel::new(
                    &mut store,
                    &format!("policy.{key}"),
                    d,
                    &mut rng,
                ))
            } else {
                None
            };
            branches.push(ModalityBranch {
                modality: m,
                projection: Projection { w, b },
                enhance,
                policy,
            });
        }

        let block_width = if ab.branches == Branches::Both {
            2 * d
        } else {
            d
        };
        let (fusion, fused_width) = match config.fusion {
            FusionMode::WeightedSum => (
                Some(store.add(
                    "fusion.logits",
                    ParamGroup::Fusion,
                    Tensor::zeros(&[1, active.len()]),
                )),
                block_width,
            ),
            FusionMode::Concat => (None, block_width * active.len()),
        };
        let out = config.task.output_width();
        let head = Projection {
            w: store.add(
                "head.w",
                ParamGroup::Head,
                xavier_uniform(fused_width, out, &mut rng),
            ),
            b: store.add("head.b", ParamGroup::Head, Tensor::zeros(&[1, out])),
        };

        let critic_start = store.len();
        let critic = if with_critic && ab.uses_csm() {
            Some(CriticModel::new(
                &mut store,
                active.len(),
                d,
                config.critic_dim(),
                config.critic_heads,
                &mut rng,
            )?)
        } else {
            None
        };
        Ok(MmclModel {
            config,
            input_dims,
            store,
            branches,
            fusion,
            head,
            critic,
            critic_start,
        })
    }

    /// Drops the critic and its parameters.
    pub fn into_inference(mut self) -> Self {
        self.strip_critic();
        self
    }

    pub fn strip_critic(&mut self) {
        self.store.truncate(self.critic_start);
        self.critic = None;
    }

    pub fn has_critic(&self) -> bool {
        self.critic.is_some()
    }

    pub fn branch(&self, m: Modality) -> Option<&ModalityBranch> {
        self.branches.iter().find(|b| b.modality == m)
    }

    pub fn fused_width(&self) -> usize {
        let block = if self.config.ablation.branches == Branches::Both {
            2 * self.config.d
        } else {
            self.config.d
        };
        match self.config.fusion {
            FusionMode::WeightedSum => block,
            FusionMode::Concat => block * self.branches.len(),
        }
    }

    /// Checks that every active modality has the expected width and that
    /// they share one length; returns that length.
    pub fn check_sample(&self, sample: &Sample) -> Result<usize> {
        let mut length = None;
        for b in &self.branches {
            let x = sample.feature(b.modality);
            let want = self.input_dims[b.modality.index()];
            if !x.is_matrix() || x.cols() != want {
                return Err(MmclError::shape(
                    "project",
                    format!(
                        "sample '{}' modality {} has shape {:?}, expected width {}",
                        sample.id,
                        b.modality.key(),
                        x.shape(),
                        want
                    ),
                ));
            }
            match length {
                None => length = Some(x.rows()),
                Some(l) if l != x.rows() => {
                    return Err(MmclError::shape(
                        "forward",
                        format!(
                            "sample '{}': modality lengths differ ({} vs {})",
                            sample.id,
                            l,
                            x.rows()
                        ),
                    ))
                }
                _ => {}
            }
        }
        let l = length.unwrap_or(0);
        if l == 0 {
            return Err(MmclError::shape(
                "forward",
                format!("sample '{}' has an empty sequence", sample.id),
            ));
        }
        Ok(l)
    }

    pub fn project_on(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        branch: &ModalityBranch,
        x: Var,
    ) -> Result<Var> {
        let want = self.input_dims[branch.modality.index()];
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != want {
            return Err(MmclError::shape(
                "project",
                format!("input {:?} for modality width {}", shape, want),
            ));
        }
        tape.affine(x, p[branch.projection.w], p[branch.projection.b])
    }

    /// Projects one modality's sequence into the shared space.
    pub fn project(&self, x: &Tensor, m: Modality) -> Result<Tensor> {
        let branch = self.branch(m).ok_or_else(|| {
            MmclError::Invalid(format!(
                "modality {} is not in the configured mask",
                m.key()
            ))
        })?;
        let mut tape = Tape::new();
        let p = tape.bind(&self.store);
        let x = tape.constant(x.clone());
        let z = self.project_on(&mut tape, &p, branch, x)?;
        Ok(tape.value(z).clone())
    }

    /// Records the whole forward pass of one sample.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        sample: &Sample,
    ) -> Result<ForwardVars> {
        self.check_sample(sample)?;
        let ab = self.config.ablation;
        let mut zs = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let x = tape.constant(sample.feature(b.modality).clone());
            zs.push(self.project_on(tape, p, b, x)?);
        }
        // With one modality there is nothing to compare against.
        let decouple = ab.csd && zs.len() > 1;

        let mut modalities = Vec::with_capacity(zs.len());
        for (i, b) in self.branches.iter().enumerate() {
            let z = zs[i];
            let (decoupled, common, specific) = if decouple {
                let others: Vec<Var> = zs
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, v)| *v)
                    .collect();
                let dv = decouple_on(tape, z, &others, self.config.compare_mode)?;
                (Some(dv), dv.common, dv.specific)
            } else {
                (None, z, z)
            };
            let enhanced = if ab.uses_common() {
                match &b.enhance {
                    Some(block) => Some(block.enhance_on(tape, p, common)?),
                    None => Some(common),
                }
            } else {
                None
            };
            let (action, complementary) = if ab.uses_specific() {
                match &b.policy {
                    Some(policy) => {
                        let a = policy.act_on(tape, p, specific)?;
                        (Some(a), Some(apply_action_on(tape, specific, a)?))
                    }
                    None => (None, Some(specific)),
                }
            } else {
                (None, None)
            };
            let block = match (complementary, enhanced) {
                (Some(s), Some(c)) => tape.concat(&[s, c], Axis::Cols)?,
                (Some(s), None) => s,
                (None, Some(c)) => c,
                (None, None) => unreachable!("at least one branch is always fused"),
            };
            modalities.push(ModalityVars {
                modality: b.modality,
                z,
                decoupled,
                common,
                specific,
                enhanced,
                action,
                complementary,
                block,
            });
        }

        let blocks: Vec<Var> = modalities.iter().map(|m| m.block).collect();
        let logits = self.fusion.map(|id| p[id]);
        let fused = fuse_on(tape, &blocks, self.config.fusion, logits)?;
        let pooled = tape.mean_pool_time(fused)?;
        let prediction = tape.affine(pooled, p[self.head.w], p[self.head.b])?;
        Ok(ForwardVars {
            modalities,
            fused,
            pooled,
            prediction,
        })
    }

    /// Records the critic's `Q` for a recorded forward pass, if a critic is attached.
    pub fn critic_on(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        fv: &ForwardVars,
    ) -> Result<Option<Var>> {
        let Some(critic) = &self.critic else {
            return Ok(None);
        };
        let specifics: Vec<Var> = fv.modalities.iter().map(|m| m.specific).collect();
        let actions: Option<Vec<Var>> = fv.modalities.iter().map(|m| m.action).collect();
        match actions {
            Some(actions) => Ok(Some(critic.eval_on(tape, p, &specifics, &actions)?)),
            None => Ok(None),
        }
    }

    pub fn forward(&self, sample: &Sample) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.store);
        let fv = self.forward_on(&mut tape, &p, sample)?;
        let val = |v: Var| tape.value(v).clone();
        let modalities = fv
            .modalities
            .iter()
            .map(|m| ModalityTrace {
                modality: m.modality,
                z: val(m.z),
                decoupled: m.decoupled.map(|d| DecoupledPair {
                    common: val(d.common),
                    specific: val(d.specific),
                    w_common: val(d.w_common),
                    w_specific: val(d.w_specific),
                }),
                common: val(m.common),
                specific: val(m.specific),
                enhanced: m.enhanced.map(val),
                action: m
                    .action
                    .map(|a| ActionVector(tape.value(a).data().to_vec())),
                complementary: m.complementary.map(val),
            })
            .collect();
        Ok(ForwardTrace {
            modalities,
            fused: val(fv.fused),
            prediction: tape.value(fv.prediction).data().to_vec(),
        })
    }

    /// Prediction for one sample: a single value for regression, `C` logits
    /// for classification.
    pub fn infer(&self, sample: &Sample) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.store);
        let fv = self.forward_on(&mut tape, &p, sample)?;
        Ok(tape.value(fv.prediction).data().to_vec())
    }

    pub fn predict_all<'a>(
        &self,
        samples: impl IntoIterator<Item = &'a Sample>,
    ) -> Result<Vec<Vec<f64>>> {
        samples.into_iter().map(|s| self.infer(s)).collect()
    }

    /// Value of the critic for one sample, when attached.
    pub fn critic_value(&self, sample: &Sample) -> Result<Option<f64>> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.store);
        let fv = self.forward_on(&mut tape, &p, sample)?;
        Ok(self
            .critic_on(&mut tape, &p, &fv)?
            .map(|q| tape.value(q).item()))
    }
}

/// Records the fusion of per-modality blocks.
pub fn fuse_on(
    tape: &mut Tape,
    blocks: &[Var],
    mode: FusionMode,
    logits: Option<Var>,
) -> Result<Var> {
    let first = *blocks
        .first()
        .ok_or_else(|| MmclError::Invalid("fuse: no blocks".into()))?;
    let shape = tape.shape(first).to_vec();
    for &b in blocks {
        if tape.shape(b) != shape.as_slice() {
            return Err(MmclError::shape(
                "fuse",
                format!("block {:?} vs {:?}", tape.shape(b), shape),
            ));
        }
    }
    match mode {
        FusionMode::Concat => tape.concat(blocks, Axis::Cols),
        FusionMode::WeightedSum => {
            let logits = logits
                .ok_or_else(|| MmclError::Invalid("weighted-sum fusion needs logits".into()))?;
            if tape.shape(logits) != [1, blocks.len()] {
                return Err(MmclError::shape(
                    "fuse",
                    format!(
                        "logits {:?} for {} blocks",
                        tape.shape(logits),
                        blocks.len()
                    ),
                ));
            }
            let w = tape.softmax(logits, Axis::Cols)?;
            let mut acc: Option<Var> = None;
            for (i, &b) in blocks.iter().enumerate() {
                let wi = tape.slice(w, Axis::Cols, i, i + 1)?;
                let term = tape.mul(b, wi)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => tape.add(a, term)?,
                });
            }
            Ok(acc.expect("at least one block"))
        }
    }
}

/// Fuses `L × w` blocks. `logits` is used only in weighted-sum mode.
pub fn fuse(blocks: &[Tensor], mode: FusionMode, logits: &[f64]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = blocks.iter().map(|b| tape.constant(b.clone())).collect();
    let lv = tape.constant(Tensor::row_vector(logits));
    let out = fuse_on(&mut tape, &vars, mode, Some(lv))?;
    Ok(tape.value(out).clone())
}

/// Records the per-sample prediction loss: `|y - ŷ|` or cross-entropy.
pub fn prediction_loss_on(tape: &mut Tape, prediction: Var, label: f64, task: Task) -> Result<Var> {
    let width = tape.value(prediction).len();
    if width != task.output_width() {
        return Err(MmclError::shape(
            "prediction_loss",
            format!("prediction of width {width} for {task:?}"),
        ));
    }
    match task {
        Task::Regression => {
            let y = tape.scalar(label);
            let p = tape.reshape(prediction, &[])?;
            let diff = tape.sub(p, y)?;
            Ok(tape.abs(diff))
        }
        Task::Classification { num_classes } => {
            let class = class_index(label, num_classes)?;
            let logp = tape.log_softmax(prediction, Axis::Cols)?;
            let picked = tape.slice(logp, Axis::Cols, class, class + 1)?;
            let picked = tape.reshape(picked, &[])?;
            Ok(tape.neg(picked))
        }
    }
}

/// Mean prediction loss over a batch of predictions.
pub fn prediction_loss(predictions: &[Vec<f64>], labels: &[f64], task: Task) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(MmclError::Invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut tape = Tape::new();
    let mut total = 0.0;
    for (pred, &label) in predictions.iter().zip(labels) {
        let p = tape.constant(Tensor::row_vector(pred));
        let l = prediction_loss_on(&mut tape, p, label, task)?;
        total += tape.value(l).item();
    }
    Ok(total / labels.len() as f64)
}

/// `α1·Lp + α2·(Lpolicy + Lcritic)`.
pub fn total_loss(lp: f64, lpolicy: f64, lcritic: f64, config: &MmclConfig) -> f64 {
    config.alpha1 * lp + config.alpha2 * (lpolicy + lcritic)
}
