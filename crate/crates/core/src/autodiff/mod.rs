//! Minimal reverse-mode differentiation engine.

mod gemm;
mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::finite_difference_check;
pub use tape::{ConvGeom, Op, Record, Tape, Var, EPSILON_NORM};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use gemm::gemm;
