//! Dense tensors, a reverse-mode tape, and finite-difference checking.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{excess_relative_error, grad_check, relative_error, rounding_noise, GradCheckReport, ParamCheck, Probe};
pub use tape::{argmax, sigmoid, softmax, Activation, Gradients, Reduce, Tape, Var};
pub use tensor::{axpy, dot, Real, Tensor};
