//! Dense linear algebra, elementary differentiable operations and the
//! deterministic random number generator.

pub mod matrix;
pub mod ops;
pub mod rng;

pub use matrix::{matmul, matmul_nt, matmul_tn, Matrix};
pub use ops::{relu_backward, relu_forward, softmax_rows};
pub use rng::{derive_seed, Rng, RngState};
