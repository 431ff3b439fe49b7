//! Complementary specific-feature mining.
//!
//! Each modality owns a [`PolicyModel`] that maps its specific sequence to a
//! vector of temporal weights in `(0, 1)`. A [`CriticModel`] sees the specific
//! sequences and actions of all modalities at once and scores them with a
//! single value `Q`. The critic regresses `Q` onto the TD target
//! `R + γ·Q''`; the policies ascend `Q`, so each policy's update depends on
//! what the other modalities observed and did.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    xavier_uniform, Axis, Bindings, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var,
};
use crate::enhancement::{Attention, FeedForward};
use crate::error::{MmclError, Result};

/// Prediction task. Decides reward, loss and metric families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    Regression,
    Classification { num_classes: usize },
}

impl Task {
    /// Width of the prediction head.
    pub fn output_width(&self) -> usize {
        match self {
            Task::Regression => 1,
            Task::Classification { num_classes } => *num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Task::Classification { num_classes } if *num_classes < 2 => Err(MmclError::Config(
                format!("classification needs at least 2 classes, got {num_classes}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub task: Task,
    pub gamma: f64,
}

impl RewardSpec {
    pub fn new(task: Task, gamma: f64) -> Result<Self> {
        let spec = RewardSpec { task, gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(MmclError::Config(format!(
                "discount must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Temporal importance weights for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionVector(pub Vec<f64>);

impl ActionVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_column(&self) -> Tensor {
        Tensor::column_vector(&self.0)
    }
}

/// One fully connected layer `d → 1` followed by a sigmoid, applied per timestep.
#[derive(Clone, Debug)]
pub struct PolicyModel {
    pub dim: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl PolicyModel {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{prefix}.w"),
            ParamGroup::Policy,
            xavier_uniform(dim, 1, rng),
        );
        let b = store.add(
            format!("{prefix}.b"),
            ParamGroup::Policy,
            Tensor::zeros(&[1, 1]),
        );
        PolicyModel { dim, w, b }
    }

    /// Records `sigmoid(zs·w + b)` as an `L × 1` column.
    pub fn act_on(&self, tape: &mut Tape, p: &Bindings, zs: Var) -> Result<Var> {
        let shape = tape.shape(zs);
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(MmclError::shape(
                "policy_act",
                format!("input {:?}, policy width {}", shape, self.dim),
            ));
        }
        let logits = tape.affine(zs, p[self.w], p[self.b])?;
        Ok(tape.sigmoid(logits))
    }
}

/// Scales row `i` of `zs` by `a_i`. `a` is an `L × 1` column.
pub fn apply_action_on(tape: &mut Tape, zs: Var, a: Var) -> Result<Var> {
    let (l, al, ac) = (
        tape.value(zs).rows(),
        tape.value(a).rows(),
        tape.value(a).cols(),
    );
    if ac != 1 || al != l {
        return Err(MmclError::shape(
            "apply_action",
            format!("action {al}x{ac} for sequence of length {l}"),
        ));
    }
    tape.mul(zs, a)
}

pub fn policy_act(zs: &Tensor, policy: &PolicyModel, store: &ParamStore) -> Result<ActionVector> {
    let mut tape = Tape::new();
    let p = tape.bind(store);
    let x = tape.constant(zs.clone());
    let a = policy.act_on(&mut tape, &p, x)?;
    Ok(ActionVector(tape.value(a).data().to_vec()))
}

pub fn apply_action(zs: &Tensor, action: &[f64]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(zs.clone());
    let a = tape.constant(Tensor::column_vector(action));
    let out = apply_action_on(&mut tape, x, a)?;
    Ok(tape.value(out).clone())
}

/// Centralized critic: input projection, one multi-head encoder block,
/// temporal mean pooling and a scalar head.
#[derive(Clone, Debug)]
pub struct CriticModel {
    pub modalities: usize,
    pub dim: usize,
    pub width: usize,
    pub w_in: ParamId,
    pub b_in: ParamId,
    pub attention: Attention,
    pub ffn: FeedForward,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

impl CriticModel {
    /// `modalities` blocks of `dim + 1` input features, internal width `width`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        modalities: usize,
        dim: usize,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let g = ParamGroup::Critic;
        let input = modalities * (dim + 1);
        let w_in = store.add("critic.in.w", g, xavier_uniform(input, width, rng));
        let b_in = store.add("critic.in.b", g, Tensor::zeros(&[1, width]));
        let attention = Attention::new(store, "critic.attn", g, width, heads, true, rng)?;
        let ffn = FeedForward::new(store, "critic.ffn", g, width, 2 * width, rng)?;
        let w_out = store.add("critic.out.w", g, xavier_uniform(width, 1, rng));
        let b_out = store.add("critic.out.b", g, Tensor::zeros(&[1, 1]));
        Ok(CriticModel {
            modalities,
            dim,
            width,
            w_in,
            b_in,
            attention,
            ffn,
            w_out,
            b_out,
        })
    }

    /// Records `Q` for one sample as a shape-`[]` scalar.
    pub fn eval_on(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        specifics: &[Var],
        actions: &[Var],
    ) -> Result<Var> {
        if specifics.len() != self.modalities || actions.len() != self.modalities {
            return Err(MmclError::shape(
                "critic_eval",
                format!(
                    "expected {} modalities, got {} specifics and {} actions",
                    self.modalities,
                    specifics.len(),
                    actions.len()
                ),
            ));
        }
        let mut blocks = Vec::with_capacity(2 * self.modalities);
        for (&z, &a) in specifics.iter().zip(actions) {
            let (zs, as_) = (tape.shape(z).to_vec(), tape.shape(a).to_vec());
            if zs.len() != 2 || zs[1] != self.dim || as_ != [zs[0], 1] {
                return Err(MmclError::shape(
                    "critic_eval",
                    format!("specific {:?} with action {:?}", zs, as_),
                ));
            }
            blocks.push(z);
            blocks.push(a);
        }
        let x = tape.concat(&blocks, Axis::Cols)?;
        let h = tape.affine(x, p[self.w_in], p[self.b_in])?;
        let att = self.attention.attend(tape, p, h)?.output;
        let h = tape.add(h, att)?;
        let f = self.ffn.apply(tape, p, h)?;
        let h = tape.add(h, f)?;
        let pooled = tape.mean_pool_time(h)?;
        let q = tape.affine(pooled, p[self.w_out], p[self.b_out])?;
        tape.reshape(q, &[])
    }
}

pub fn critic_eval(
    specifics: &[Tensor],
    actions: &[ActionVector],
    critic: &CriticModel,
    store: &ParamStore,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.bind(store);
    let z: Vec<Var> = specifics.iter().map(|s| tape.constant(s.clone())).collect();
    let a: Vec<Var> = actions
        .iter()
        .map(|a| tape.constant(a.to_column()))
        .collect();
    let q = critic.eval_on(&mut tape, &p, &z, &a)?;
    Ok(tape.value(q).item())
}

/// Immediate reward: `-|label - prediction|` for regression, the softmax
/// probability of the true class for classification. Plain numbers, no
/// gradient flows through them.
pub fn compute_reward(prediction: &[f64], label: f64, spec: &RewardSpec) -> Result<f64> {
    match spec.task {
        Task::Regression => {
            if prediction.len() != 1 {
                return Err(MmclError::shape(
                    "compute_reward",
                    format!("regression prediction of width {}", prediction.len()),
                ));
            }
            Ok(-(label - prediction[0]).abs())
        }
        Task::Classification { num_classes } => {
            if prediction.len() != num_classes {
                return Err(MmclError::shape(
                    "compute_reward",
                    format!("{} logits for {} classes", prediction.len(), num_classes),
                ));
            }
            let class = class_index(label, num_classes)?;
            let max = prediction.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = prediction.iter().map(|v| (v - max).exp()).sum();
            Ok((prediction[class] - max).exp() / total)
        }
    }
}

/// Validates a class label stored as a real number.
pub fn class_index(label: f64, num_classes: usize) -> Result<usize> {
    if label.fract() != 0.0 || label < 0.0 || label >= num_classes as f64 {
        return Err(MmclError::Invalid(format!(
            "class label {label} outside [0, {num_classes})"
        )));
    }
    Ok(label as usize)
}

/// Bootstrap information for one stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdContext {
    pub q_next: Option<f64>,
    pub is_terminal: bool,
}

impl TdContext {
    pub fn terminal() -> Self {
        TdContext {
            q_next: None,
            is_terminal: true,
        }
    }

    pub fn bootstrap(q_next: f64) -> Self {
        TdContext {
            q_next: Some(q_next),
            is_terminal: false,
        }
    }
}

/// `Q' = R + γ·Q''`, with `Q'' = 0` on a terminal stage.
pub fn td_target(reward: f64, ctx: &TdContext, spec: &RewardSpec) -> Result<f64> {
    if !reward.is_finite() {
        return Err(MmclError::NonFinite(format!("reward {reward}")));
    }
    let next = if ctx.is_terminal {
        0.0
    } else {
        ctx.q_next.unwrap_or(0.0)
    };
    if !next.is_finite() {
        return Err(MmclError::NonFinite(format!("bootstrap value {next}")));
    }
    Ok(reward + spec.gamma * next)
}

/// Squared TD error `(Q - Q')²`; `Q'` is a constant.
pub fn critic_loss_on(tape: &mut Tape, q: Var, q_target: f64) -> Result<Var> {
    let target = tape.scalar(q_target);
    let diff = tape.sub(q, target)?;
    Ok(tape.square(diff))
}

pub fn critic_loss(q: f64, q_target: f64) -> f64 {
    (q - q_target).powi(2)
}

/// Policy objective `-Q`.
pub fn policy_objective_on(tape: &mut Tape, q: Var) -> Var {
    tape.neg(q)
}

pub fn policy_objective(q: f64) -> f64 {
    -q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn zero_policy_gives_half() {
        let mut store = ParamStore::new();
        let pol = PolicyModel::new(&mut store, "pi.v", 3, &mut rng());
        *store.get_mut(pol.w) = Tensor::zeros(&[3, 1]);
        let a = policy_act(&Tensor::full(&[4, 3], 7.0), &pol, &store).unwrap();
        assert_eq!(a.values(), &[0.5; 4]);
    }

    #[test]
    fn policy_hand_case() {
        let mut store = ParamStore::new();
        let pol = PolicyModel::new(&mut store, "pi.v", 2, &mut rng());
        *store.get_mut(pol.w) = Tensor::column_vector(&[1.0, 0.0]);
        let zs = Tensor::from_rows(&[[0.0, 5.0], [2.0, -1.0]]).unwrap();
        let a = policy_act(&zs, &pol, &store).unwrap();
        assert_eq!(a.values()[0], 0.5);
        assert!((a.values()[1] - 0.88080).abs() < 5e-6);
    }

    #[test]
    fn action_scaling() {
        let zs = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(apply_action(&zs, &[1.0, 1.0]).unwrap(), zs);
        assert_eq!(
            apply_action(&zs, &[0.0, 0.0]).unwrap(),
            Tensor::zeros(&[2, 2])
        );
        assert_eq!(
            apply_action(&zs, &[1.0, 0.0]).unwrap().data(),
            &[1.0, 2.0, 0.0, 0.0]
        );
        assert!(apply_action(&zs, &[1.0]).is_err());
    }

    #[test]
    fn rewards() {
        let reg = RewardSpec::new(Task::Regression, 0.5).unwrap();
        assert_eq!(compute_reward(&[1.3], 1.3, &reg).unwrap(), 0.0);
        assert_eq!(compute_reward(&[0.0], 2.6, &reg).unwrap(), -2.6);
        let cls = RewardSpec::new(Task::Classification { num_classes: 4 }, 0.5).unwrap();
        assert!((compute_reward(&[0.3; 4], 2.0, &cls).unwrap() - 0.25).abs() < 1e-15);
        assert!(compute_reward(&[0.3; 4], 4.0, &cls).is_err());
        assert!(compute_reward(&[0.3; 4], 1.5, &cls).is_err());
    }

    #[test]
    fn td_targets() {
        let spec = RewardSpec::new(Task::Regression, 0.5).unwrap();
        assert_eq!(
            td_target(-1.0, &TdContext::bootstrap(2.0), &spec).unwrap(),
            0.0
        );
        assert_eq!(
            td_target(-0.7, &TdContext::terminal(), &spec).unwrap(),
            -0.7
        );
        let myopic = RewardSpec::new(Task::Regression, 0.0).unwrap();
        assert_eq!(
            td_target(0.4, &TdContext::bootstrap(99.0), &myopic).unwrap(),
            0.4
        );
        assert!(td_target(f64::NAN, &TdContext::terminal(), &spec).is_err());
        assert!(RewardSpec::new(Task::Regression, 1.5).is_err());
        assert!(RewardSpec::new(Task::Classification { num_classes: 1 }, 0.5).is_err());
    }

    #[test]
    fn critic_and_policy_losses() {
        assert_eq!(critic_loss(2.0, 2.0), 0.0);
        assert_eq!(critic_loss(1.5, 1.0), 0.25);
        assert_eq!(policy_objective(1.5), -1.5);

        let mut tape = Tape::new();
        let q = tape.input(Tensor::scalar(1.25));
        let l = critic_loss_on(&mut tape, q, 0.5).unwrap();
        let g = tape.backward(l).unwrap().wrt(&tape, q).item();
        assert!((g - 1.5).abs() < 1e-15);

        let mut tape = Tape::new();
        let q = tape.input(Tensor::scalar(1.5));
        let l = policy_objective_on(&mut tape, q);
        assert_eq!(tape.backward(l).unwrap().wrt(&tape, q).item(), -1.0);
    }

    #[test]
    fn critic_is_deterministic_scalar() {
        let mut store = ParamStore::new();
        let critic = CriticModel::new(&mut store, 3, 4, 8, 8, &mut rng()).unwrap();
        let z = vec![
            Tensor::full(&[5, 4], 0.3),
            Tensor::full(&[5, 4], -0.1),
            Tensor::full(&[5, 4], 1.0),
        ];
        let a = vec![
            ActionVector(vec![0.2; 5]),
            ActionVector(vec![0.5; 5]),
            ActionVector(vec![0.9; 5]),
        ];
        let q1 = critic_eval(&z, &a, &critic, &store).unwrap();
        let q2 = critic_eval(&z, &a, &critic, &store).unwrap();
        assert_eq!(q1.to_bits(), q2.to_bits());
        assert!(critic_eval(&z[..2], &a[..2], &critic, &store).is_err());
    }
}
