//! Minimal reverse-mode differentiation over dense `f64` matrices, plus Adam.

mod adam;
mod gradcheck;
mod init;
mod params;
mod suite;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport, DEFAULT_EPS};
pub use init::xavier_uniform;
pub use params::{Param, ParamGrads, ParamGroup, ParamId, ParamStore};
pub use suite::{primitive_names, primitive_suite, SuiteEntry};
pub use tape::{Axis, Bindings, Gradients, OpKind, Tape, Var, NORM_FLOOR};
pub use tensor::Tensor;
