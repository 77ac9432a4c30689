//! Minimal reverse-mode automatic differentiation over dense real/complex arrays.
//!
//! The op set is fixed: elementwise arithmetic, real FFTs, periodic convolution,
//! reductions and a few structural ops. Each op has a hand-written adjoint; complex
//! adjoints are taken with respect to the real inner product on interleaved
//! `(re, im)` parts, so `<L x, y> = <x, L* y>` holds for every registered op.

mod conv;
pub mod fft;
mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_components, tape_gradient, DEFAULT_EPS};
pub use tape::{GradientMap, OpKind, Tape, Var};
pub use tensor::{Buffer, DType, Tensor};
