//! From-scratch spatial-transformer cell classifier.
//!
//! The crate is one self-contained stack: a dense-tensor reverse-mode
//! autodiff core ([`tensor`], [`optim`], [`gradcheck`]), the spatial
//! transformer geometry ([`stn`]), training objectives ([`losses`]),
//! network builders ([`networks`]), dataset handling plus a synthetic
//! generator ([`data`]), evaluation metrics ([`metrics`]), and the staged
//! training pipeline ([`pipeline`]).
//!
//! Everything numeric is generic over the [`num::Real`] scalar; the
//! aliases below fix the concrete types used by the training pipeline
//! (64-bit throughout — desk-scale sizes make precision cheaper than
//! debugging 32-bit gradient noise).

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod img;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod networks;
pub mod num;
pub mod optim;
pub mod seeding;
pub mod stn;
pub mod tensor;

pub(crate) mod ops;

pub use error::{Error, Result};
pub use num::Real;

/// Scalar type of the training pipeline.
pub type Scalar = f64;
/// Graph over the pipeline scalar.
pub type GraphT = tensor::Graph<Scalar>;
/// Single-precision graph, for callers that trade accuracy for speed.
pub type GraphF32 = tensor::Graph<f32>;
/// Adam state over the pipeline scalar.
pub type AdamT = optim::AdamState<Scalar>;
