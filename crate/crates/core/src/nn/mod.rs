//! Deterministic tensor arithmetic, seeded randomness and the differentiable
//! kernels used by the fixed decoder architecture.
//!
//! Kernels come in two layers. [`kernels`] works on flat row-major slices and
//! is what the model uses in its hot loop; [`ops`] wraps those kernels in
//! shape-checked [`Tensor`] functions, each paired with an explicit gradient
//! function. Everything is generic over [`Scalar`] so gradient checks can run
//! the exact same code in 64-bit.

pub mod gradcheck;
pub mod kernels;
pub mod ops;
mod rng;
mod scalar;
mod tensor;

pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Layer-norm epsilon used throughout.
pub const LN_EPS: f64 = 1e-5;
