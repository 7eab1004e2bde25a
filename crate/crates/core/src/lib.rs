//! Parameterized hypercomplex convolutional networks.
//!
//! Layers whose weights are a learnable sum of Kronecker products,
//! `W = Σᵢ Aᵢ ⊗ Fᵢ`, plus the multi-view architectures built from them,
//! a small reverse-mode autograd engine, synthetic multi-view data and the
//! training/evaluation pipeline around it.

pub mod autograd;
pub mod checkpoint;
#[cfg(feature = "cli")]
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod params;
pub mod phc;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
