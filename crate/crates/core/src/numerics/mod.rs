//! Dense matrices, factorizations and reverse-mode differentiation.

pub mod gradcheck;
pub mod kernels;
pub mod linalg;
mod matrix;
mod tape;

pub use linalg::{cholesky_logdet, solve, Cholesky, Lu};
pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};

pub(crate) use tape::{log_cosh, softmax_in_place};
