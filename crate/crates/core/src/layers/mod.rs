//! Numeric kernels for the differentiable layers. These operate on flat
//! slices; [`crate::graph`] wires them into the operation graph.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
mod gemm;
pub mod loss;

pub use activation::Activation;
pub mod spec;
