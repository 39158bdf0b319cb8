//! Minimal reverse-mode automatic differentiation over dense float64 tensors.

mod gradcheck;
mod param;
mod tape;
pub(crate) mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, CheckReport, FD_STEP, REL_FLOOR};
pub use param::{Bound, Param, ParamId, ParamStore};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
