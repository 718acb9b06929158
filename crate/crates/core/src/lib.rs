//! Low-rank adapters whose factors are optimally rescaled and merged into the
//! frozen weight every step, so the cumulative update can exceed the adapter
//! rank.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`, which is what the trainer and
//! the tolerances are calibrated for.

// NaN must fail every positivity check, so `!(x > 0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod checkpoint;
pub mod error;
pub mod linalg;
pub mod optimizer;
pub mod scalar;
pub mod scaling;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::DenseMatrix<f64>;
pub type Matrix32 = linalg::DenseMatrix<f32>;
pub type Layer = adapter::LoraLayer<f64>;
pub type Grads = adapter::AdapterGrads<f64>;
pub type Moments = optimizer::MomentState<f64>;
pub type Outcome = scaling::ScalingOutcome<f64>;
pub type Hyper = scaling::Hyper<f64>;
pub type Svd = linalg::SvdResult<f64>;
