//! Reverse-mode differentiation over [`DenseArray`](crate::tensor::DenseArray)s.

mod check;
mod param;
mod tape;

pub use check::{central_difference, relative_error, RELATIVE_ERROR_FLOOR};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{BackwardFault, Gradients, Tape, Var, LAYER_NORM_EPS};
