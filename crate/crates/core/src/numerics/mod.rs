//! Minimal dense-tensor engine: row-major tensors, a reverse-mode tape, Adam,
//! and a seeded random source.

mod adam;
mod error;
pub mod kernels;
mod ops;
mod rng;
mod scalar;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use error::{NumericsError, Result};
pub use ops::{cosine_similarity, cross_entropy, l2_normalize, matmul, softmax};
pub use rng::{splitmix64, Rng};
pub use scalar::{cast_slice, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Rows with norm at or below this are rejected by normalization.
pub const NORM_EPS: f64 = 1e-12;
