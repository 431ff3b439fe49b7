//! Mini-batch training. Each batch is one stage of the actor-critic loop:
//! the bootstrap value `Q''` is the critic's mean value on the next batch
//! of the epoch, and the last batch of an epoch is terminal.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{prediction_loss_on, MmclConfig, MmclModel};
use crate::data::{Dataset, Sample};
use crate::diffcore::{
    adam_step, grad_check_params, AdamHyper, AdamState, Bindings, GradCheckReport, ParamGrads,
    ParamGroup, Tape, Var, DEFAULT_EPS,
};
use crate::error::{MmclError, Result};
use crate::mining::{
    compute_reward, critic_loss_on, policy_objective_on, td_target, Task, TdContext,
};

/// Batch means of the loss terms, all measured before the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub prediction_loss: f64,
    pub policy_loss: f64,
    pub critic_loss: f64,
    pub total_loss: f64,
    pub mean_q: f64,
    pub mean_reward: f64,
    /// Mean `|y - ŷ|` (regression) or error rate (classification).
    pub error: f64,
    pub count: usize,
}

/// Gradients of the three weighted objectives, each restricted to the
/// parameters it is allowed to move.
#[derive(Clone, Debug)]
pub struct BatchGrads {
    /// `α1·Lp` with respect to every non-critic parameter.
    pub prediction: ParamGrads,
    /// `α2·Lpolicy` with respect to policy parameters.
    pub policy: ParamGrads,
    /// `α2·Lcritic` with respect to critic parameters.
    pub critic: ParamGrads,
    pub stats: BatchStats,
}

impl BatchGrads {
    pub fn combined(&self) -> ParamGrads {
        let mut out = self.prediction.clone();
        out.merge_filtered(&self.policy, |_| true);
        out.merge_filtered(&self.critic, |_| true);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total_loss: f64,
    pub prediction_loss: f64,
    pub policy_loss: f64,
    pub critic_loss: f64,
    pub mean_q: f64,
    pub mean_reward: f64,
    /// Training MAE (regression) or error rate (classification), pre-update.
    pub train_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Inference form: no critic.
    pub model: MmclModel,
    pub history: TrainHistory,
}

fn finite(value: f64, term: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(MmclError::NonFinite(format!("{term} = {value}")))
    }
}

fn batch_mean(tape: &mut Tape, terms: &[Var]) -> Result<Option<Var>> {
    if terms.is_empty() {
        return Ok(None);
    }
    let rows: Vec<Var> = terms
        .iter()
        .map(|&t| tape.reshape(t, &[1, 1]))
        .collect::<Result<_>>()?;
    let col = tape.concat(&rows, crate::diffcore::Axis::Rows)?;
    Ok(Some(tape.mean_all(col)?))
}

fn sample_error(pred: &[f64], label: f64, task: Task) -> f64 {
    match task {
        Task::Regression => (pred[0] - label).abs(),
        Task::Classification { .. } => {
            if crate::eval::metrics::argmax(pred) as f64 == label {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Loss terms of one batch recorded on a tape.
#[derive(Clone, Debug)]
pub struct BatchObjectives {
    /// Mean prediction loss.
    pub prediction: Var,
    /// Mean `-Q`, when a critic is attached.
    pub policy: Option<Var>,
    /// Mean squared TD error, when a critic is attached.
    pub critic: Option<Var>,
    /// TD target per sample (empty without a critic).
    pub targets: Vec<f64>,
    pub stats: BatchStats,
}

impl BatchObjectives {
    /// Records `α1·Lp + α2·(Lpolicy + Lcritic)`.
    pub fn total_on(&self, tape: &mut Tape, cfg: &MmclConfig) -> Result<Var> {
        let mut total = tape.scalar_mul(self.prediction, cfg.alpha1);
        for term in [self.policy, self.critic].into_iter().flatten() {
            let w = tape.scalar_mul(term, cfg.alpha2);
            total = tape.add(total, w)?;
        }
        Ok(total)
    }
}

/// Records the forward passes and loss terms of `batch`. TD targets come
/// from the current predictions unless `frozen_targets` supplies them.
pub fn record_objectives(
    model: &MmclModel,
    tape: &mut Tape,
    p: &Bindings,
    batch: &[&Sample],
    ctx: TdContext,
    frozen_targets: Option<&[f64]>,
) -> Result<BatchObjectives> {
    if batch.is_empty() {
        return Err(MmclError::Invalid("empty batch".into()));
    }
    let cfg = &model.config;
    let spec = cfg.reward_spec();
    let (mut lp_terms, mut pol_terms, mut crit_terms, mut targets) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut q_sum, mut r_sum, mut err_sum) = (0.0, 0.0, 0.0);
    for (i, sample) in batch.iter().enumerate() {
        let fv = model.forward_on(tape, p, sample)?;
        lp_terms.push(prediction_loss_on(
            tape,
            fv.prediction,
            sample.label,
            cfg.task,
        )?);
        let pred = tape.value(fv.prediction).data().to_vec();
        let reward = compute_reward(&pred, sample.label, &spec)?;
        r_sum += reward;
        err_sum += sample_error(&pred, sample.label, cfg.task);
        if let Some(q) = model.critic_on(tape, p, &fv)? {
            q_sum += tape.value(q).item();
            let target = match frozen_targets {
                Some(t) => *t.get(i).ok_or_else(|| {
                    MmclError::Invalid(format!("no frozen target for sample {i}"))
                })?,
                None => td_target(reward, &ctx, &spec)?,
            };
            targets.push(target);
            crit_terms.push(critic_loss_on(tape, q, target)?);
            pol_terms.push(policy_objective_on(tape, q));
        }
    }
    let n = batch.len() as f64;
    let prediction = batch_mean(tape, &lp_terms)?.expect("non-empty batch");
    let policy = batch_mean(tape, &pol_terms)?;
    let critic = batch_mean(tape, &crit_terms)?;

    let value = |v: Option<Var>| v.map(|v| tape.value(v).item()).unwrap_or(0.0);
    let mut stats = BatchStats {
        prediction_loss: finite(tape.value(prediction).item(), "prediction loss")?,
        policy_loss: finite(value(policy), "policy loss")?,
        critic_loss: finite(value(critic), "critic loss")?,
        total_loss: 0.0,
        mean_q: if policy.is_some() { q_sum / n } else { 0.0 },
        mean_reward: r_sum / n,
        error: err_sum / n,
        count: batch.len(),
    };
    stats.total_loss = super::total_loss(
        stats.prediction_loss,
        stats.policy_loss,
        stats.critic_loss,
        cfg,
    );
    Ok(BatchObjectives {
        prediction,
        policy,
        critic,
        targets,
        stats,
    })
}

/// Forward pass, losses and the three routed gradients for one batch.
pub fn batch_gradients(model: &MmclModel, batch: &[&Sample], ctx: TdContext) -> Result<BatchGrads> {
    let cfg = &model.config;
    let mut tape = Tape::new();
    let p = tape.bind(&model.store);
    let obj = record_objectives(model, &mut tape, &p, batch, ctx, None)?;
    let store = &model.store;
    let routed = |tape: &mut Tape,
                  loss: Option<Var>,
                  weight: f64,
                  keep: &dyn Fn(ParamGroup) -> bool|
     -> Result<ParamGrads> {
        let mut out = ParamGrads::new();
        if let Some(loss) = loss {
            let weighted = tape.scalar_mul(loss, weight);
            let all = tape.backward(weighted)?.params(tape);
            out.merge_filtered(&all, |id| keep(store.group(id)));
        }
        Ok(out)
    };
    let prediction = routed(&mut tape, Some(obj.prediction), cfg.alpha1, &|g| {
        g != ParamGroup::Critic
    })?;
    let policy = routed(&mut tape, obj.policy, cfg.alpha2, &|g| {
        g == ParamGroup::Policy
    })?;
    let critic = routed(&mut tape, obj.critic, cfg.alpha2, &|g| {
        g == ParamGroup::Critic
    })?;
    Ok(BatchGrads {
        prediction,
        policy,
        critic,
        stats: obj.stats,
    })
}

/// Mean critic value over a batch with the current parameters; 0 without a critic.
pub fn mean_q(model: &MmclModel, batch: &[&Sample]) -> Result<f64> {
    if model.critic.is_none() || batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in batch {
        total += model.critic_value(s)?.unwrap_or(0.0);
    }
    finite(total / batch.len() as f64, "bootstrap value")
}

/// Finite-difference check of the full composite loss with respect to every
/// parameter of `model` (critic included) on `batch`. TD targets are frozen
/// at their values for the unperturbed parameters.
pub fn end_to_end_grad_check(
    model: &MmclModel,
    batch: &[&Sample],
    ctx: TdContext,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let p = tape.bind(&model.store);
    let targets = record_objectives(model, &mut tape, &p, batch, ctx, None)?.targets;
    let cfg = &model.config;
    grad_check_params(
        &model.store,
        |tape, p| {
            let obj = record_objectives(model, tape, p, batch, ctx, Some(&targets))?;
            obj.total_on(tape, cfg)
        },
        DEFAULT_EPS,
        |_| true,
    )
}

/// Owns a model under training together with its optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: MmclModel,
    pub adam: AdamState,
    pub history: TrainHistory,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: MmclConfig, input_dims: [usize; 3]) -> Result<Self> {
        Ok(Self::from_model(MmclModel::new(config, input_dims)?))
    }

    pub fn from_model(model: MmclModel) -> Self {
        let hyper = AdamHyper {
            lr: model.config.lr,
            ..AdamHyper::default()
        };
        let adam = AdamState::new(&model.store, hyper);
        // Shuffling uses its own stream so it does not depend on model size.
        let rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x5eed_5417_f1e5_0001);
        Trainer {
            model,
            adam,
            history: TrainHistory::default(),
            rng,
        }
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, batch: &[&Sample], ctx: TdContext) -> Result<BatchStats> {
        let grads = batch_gradients(&self.model, batch, ctx)?;
        adam_step(&mut self.model.store, &grads.combined(), &mut self.adam)?;
        Ok(grads.stats)
    }

    /// One pass over `data` in seeded shuffled mini-batches.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(MmclError::Data("cannot train on an empty dataset".into()));
        }
        let mut order: Vec<&Sample> = data.samples.iter().collect();
        order.shuffle(&mut self.rng);
        let batches: Vec<&[&Sample]> = order.chunks(self.model.config.batch_size).collect();
        let epoch = self.history.epochs.len();
        let mut acc = BatchStats::default();
        for (t, batch) in batches.iter().enumerate() {
            let ctx = match batches.get(t + 1) {
                Some(next) if self.model.critic.is_some() => {
                    TdContext::bootstrap(mean_q(&self.model, next)?)
                }
                _ => TdContext::terminal(),
            };
            let s = self.step(batch, ctx).map_err(|e| match e {
                MmclError::NonFinite(m) => {
                    MmclError::NonFinite(format!("{m} (epoch {epoch}, batch {t})"))
                }
                other => other,
            })?;
            let w = s.count as f64;
            acc.prediction_loss += w * s.prediction_loss;
            acc.policy_loss += w * s.policy_loss;
            acc.critic_loss += w * s.critic_loss;
            acc.total_loss += w * s.total_loss;
            acc.mean_q += w * s.mean_q;
            acc.mean_reward += w * s.mean_reward;
            acc.error += w * s.error;
            acc.count += s.count;
        }
        let n = acc.count as f64;
        let stats = EpochStats {
            epoch,
            total_loss: acc.total_loss / n,
            prediction_loss: acc.prediction_loss / n,
            policy_loss: acc.policy_loss / n,
            critic_loss: acc.critic_loss / n,
            mean_q: acc.mean_q / n,
            mean_reward: acc.mean_reward / n,
            train_error: acc.error / n,
        };
        self.history.epochs.push(stats.clone());
        Ok(stats)
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            model: self.model.into_inference(),
            history: self.history,
        }
    }
}

/// Trains for `config.epochs` epochs and returns the critic-free model.
pub fn train(config: &MmclConfig, data: &Dataset) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(MmclError::Data("cannot train on an empty dataset".into()));
    }
    data.validate()?;
    if config.task != data.task {
        return Err(MmclError::Config(format!(
            "config task {:?} does not match dataset task {:?}",
            config.task, data.task
        )));
    }
    let mut trainer = Trainer::new(config.clone(), data.dims)?;
    for _ in 0..config.epochs {
        trainer.train_epoch(data)?;
    }
    Ok(trainer.into_outcome())
}
