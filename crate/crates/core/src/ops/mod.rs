//! Structured tensor ops: linear layers, convolution, pooling, and the
//! sampler pair that makes the spatial transformer differentiable.
//!
//! Each submodule exposes the `Graph` constructor method plus free
//! `pub(crate)` forward/backward kernels that the tape's reverse sweep calls
//! with plain slices (no borrow entanglement with the node store).

pub(crate) mod conv;
pub(crate) mod dense;
pub(crate) mod kernels;
pub(crate) mod pool;
pub(crate) mod sample;
