//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.
//!
//! Every forward operation appends a node to a [`Tape`]; [`Tape::backward`]
//! walks the nodes in reverse and returns the gradient of a scalar loss with
//! respect to every node that requires one. All kernels run on the calling
//! thread and are bitwise deterministic.

mod gradcheck;
mod kernels;
mod params;
mod tape;

pub use gradcheck::{
    grad_check, grad_check_params, grad_check_params_steps, grad_check_steps, gradient_suite, GradCheckEntry,
    DEFAULT_EPS,
};
pub use kernels::SpectrumPart;
pub use params::{Binding, ParamSet, Parameter};
pub use tape::{Gradients, Operand, PointwiseKind, ReduceKind, Tape, Var, NORM_EPSILON};
