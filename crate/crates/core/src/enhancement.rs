//! Crucial common-feature enhancement: intra-modal self-attention, a
//! feed-forward layer, and a residual sum of the two outputs.
//!
//! The residual adds the attention output to the feed-forward output
//! (`attn + ffn(attn)`), not the block input.

use rand::Rng;

use crate::diffcore::{
    xavier_uniform, Axis, Bindings, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var,
};
use crate::error::{MmclError, Result};

/// Scaled dot-product attention with `heads` heads and optional output projection.
#[derive(Clone, Debug)]
pub struct Attention {
    pub dim: usize,
    pub heads: usize,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub out: Option<(ParamId, ParamId)>,
}

/// Attention output plus the per-head `L × L` weight matrices.
pub struct Attended {
    pub output: Var,
    pub weights: Vec<Var>,
}

fn bias(store: &mut ParamStore, name: String, group: ParamGroup, width: usize) -> ParamId {
    store.add(name, group, Tensor::zeros(&[1, width]))
}

impl Attention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        dim: usize,
        heads: usize,
        with_output: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(MmclError::Config(format!(
                "attention width {dim} is not divisible by {heads} heads"
            )));
        }
        let w = |name: &str, rng: &mut R, store: &mut ParamStore| {
            store.add(
                format!("{prefix}.{name}"),
                group,
                xavier_uniform(dim, dim, rng),
            )
        };
        let wq = w("wq", rng, store);
        let wk = w("wk", rng, store);
        let wv = w("wv", rng, store);
        let out = if with_output {
            Some(w("wo", rng, store))
        } else {
            None
        };
        let bq = bias(store, format!("{prefix}.bq"), group, dim);
        let bk = bias(store, format!("{prefix}.bk"), group, dim);
        let bv = bias(store, format!("{prefix}.bv"), group, dim);
        let out = out.map(|wo| (wo, bias(store, format!("{prefix}.bo"), group, dim)));
        Ok(Attention {
            dim,
            heads,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            out,
        })
    }

    pub fn attend(&self, tape: &mut Tape, p: &Bindings, x: Var) -> Result<Attended> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(MmclError::shape(
                "self_attention",
                format!("input {:?}, model width {}", shape, self.dim),
            ));
        }
        let q = tape.affine(x, p[self.wq], p[self.bq])?;
        let k = tape.affine(x, p[self.wk], p[self.bk])?;
        let v = tape.affine(x, p[self.wv], p[self.bv])?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice(q, Axis::Cols, h * dh, (h + 1) * dh)?,
                    tape.slice(k, Axis::Cols, h * dh, (h + 1) * dh)?,
                    tape.slice(v, Axis::Cols, h * dh, (h + 1) * dh)?,
                )
            };
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scalar_mul(scores, scale);
            let a = tape.softmax(scores, Axis::Cols)?;
            outs.push(tape.matmul(a, vh)?);
            weights.push(a);
        }
        let mut output = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat(&outs, Axis::Cols)?
        };
        if let Some((wo, bo)) = self.out {
            output = tape.affine(output, p[wo], p[bo])?;
        }
        Ok(Attended { output, weights })
    }
}

/// Two-layer ReLU feed-forward map `relu(x·W1 + b1)·W2 + b2`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(MmclError::Config(
                "feed-forward width must be at least 1".into(),
            ));
        }
        let w1 = store.add(
            format!("{prefix}.w1"),
            group,
            xavier_uniform(dim, hidden, rng),
        );
        let w2 = store.add(
            format!("{prefix}.w2"),
            group,
            xavier_uniform(hidden, dim, rng),
        );
        let b1 = bias(store, format!("{prefix}.b1"), group, hidden);
        let b2 = bias(store, format!("{prefix}.b2"), group, dim);
        Ok(FeedForward { w1, b1, w2, b2 })
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bindings, x: Var) -> Result<Var> {
        let h = tape.affine(x, p[self.w1], p[self.b1])?;
        let h = tape.relu(h);
        tape.affine(h, p[self.w2], p[self.b2])
    }
}

/// Per-modality enhancement block.
#[derive(Clone, Debug)]
pub struct EnhanceBlock {
    pub attention: Attention,
    pub ffn: FeedForward,
}

impl EnhanceBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        d_ff: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let attention = Attention::new(
            store,
            &format!("{prefix}.attn"),
            ParamGroup::Enhance,
            dim,
            heads,
            false,
            rng,
        )?;
        let ffn = FeedForward::new(
            store,
            &format!("{prefix}.ffn"),
            ParamGroup::Enhance,
            dim,
            d_ff,
            rng,
        )?;
        Ok(EnhanceBlock { attention, ffn })
    }

    pub fn self_attention_on(&self, tape: &mut Tape, p: &Bindings, zc: Var) -> Result<Attended> {
        self.attention.attend(tape, p, zc)
    }

    pub fn enhance_on(&self, tape: &mut Tape, p: &Bindings, zc: Var) -> Result<Var> {
        let attn = self.attention.attend(tape, p, zc)?.output;
        let ffn = self.ffn.apply(tape, p, attn)?;
        tape.add(attn, ffn)
    }
}

/// Evaluates self-attention of `zc` with the block's current parameters.
pub fn self_attention(zc: &Tensor, block: &EnhanceBlock, store: &ParamStore) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = tape.bind(store);
    let x = tape.constant(zc.clone());
    let out = block.self_attention_on(&mut tape, &p, x)?.output;
    Ok(tape.value(out).clone())
}

/// Evaluates the full enhancement `attn + ffn(attn)`.
pub fn enhance(zc: &Tensor, block: &EnhanceBlock, store: &ParamStore) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = tape.bind(store);
    let x = tape.constant(zc.clone());
    let out = block.enhance_on(&mut tape, &p, x)?;
    Ok(tape.value(out).clone())
}
