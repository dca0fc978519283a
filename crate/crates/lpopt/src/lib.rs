//! Emulated low-precision training laboratory.
//!
//! The crate provides a bit-exact emulator of floating-point quantization by
//! mantissa truncation ([`fpquant`]), a small dense-matrix kernel with a
//! one-sided Jacobi SVD and Newton-Schulz orthogonalization ([`mat`], [`svd`]),
//! benchmark objectives with stochastic-gradient oracles ([`problems`]),
//! quantized Adam and Muon steppers ([`optim`]), the master/worker training
//! loop with per-component quantization telemetry ([`trainloop`]), and
//! evaluators for the convergence bounds plus numeric certification of the
//! supporting inequalities ([`theory`]).

pub mod binfmt;
pub mod error;
pub mod fpquant;
pub mod mat;
pub mod optim;
pub mod problems;
pub mod rng;
pub mod svd;
pub mod theory;
pub mod trainloop;

pub use error::Error;
pub use fpquant::{QuantPolicy, QuantSpec, Rounding};
pub use mat::Mat;
pub use rng::RngStream;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
