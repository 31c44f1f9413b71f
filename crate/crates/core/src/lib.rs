//! Numerical core for privacy-preserving collaborative learning over
//! vertically partitioned features.
//!
//! Local nodes each hold a slice of the feature columns X^l and the matching
//! coefficient block W^l. Per iteration only additive secret shares of the
//! products X^lW^l leave a node; the aggregator reconstructs Σ X^lW^l,
//! computes the back-propagated signal Δ and broadcasts it, and every node
//! finishes its own gradient locally.
//!
//! Model math is generic over [`Real`] (`f32` or `f64`) and ring arithmetic
//! over [`RingWord`] (`u32` or `u64`); the aliases below name the concrete
//! types the protocol uses.

pub mod data;
pub mod error;
pub mod models;
pub mod oracle;
pub mod ring;
pub mod rnn;
pub mod scalar;
pub mod seed;
pub mod sharing;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{Real, RingWord};

/// Plaintext matrix in 64-bit floating point.
pub type RealMatrix = tensor::Matrix<f64>;
/// Single-precision matrix.
pub type RealMatrix32 = tensor::Matrix<f32>;
/// Tensor over Z_2^64 (the default ring).
pub type RingTensor64 = ring::RingTensor<u64>;
/// Tensor over Z_2^32.
pub type RingTensor32 = ring::RingTensor<u32>;
pub type ShareSet64 = sharing::ShareSet<u64>;
pub type ShareSet32 = sharing::ShareSet<u32>;
