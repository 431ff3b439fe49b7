//! Multimodal collaborative learning for sentiment prediction.
//!
//! Each modality of a sample is projected into a shared space, split into
//! modality-common and modality-specific parts by cross-modal cosine
//! similarity ([`decoupling`]), the common part is sharpened by intra-modal
//! attention ([`enhancement`]) and the specific part is reweighted over time
//! by per-modality policies trained against a centralized critic
//! ([`mining`]). [`model`] wires these together and trains them, [`eval`]
//! scores predictions and [`data`] reads and synthesizes datasets.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod decoupling;
pub mod diffcore;
pub mod enhancement;
pub mod error;
pub mod eval;
pub mod mining;
pub mod model;

pub use error::{MmclError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/decoupling.md")]
    pub struct Decoupling;
    #[doc = include_str!("../../../book/src/enhancement.md")]
    pub struct Enhancement;
    #[doc = include_str!("../../../book/src/mining.md")]
    pub struct Mining;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
    #[doc = include_str!("../../../book/src/formats.md")]
    pub struct Formats;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
