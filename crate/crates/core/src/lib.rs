//! SAR-to-optical translation: reverse-mode autodiff, third-order residual blocks,
//! the FLT-guided branch, losses, metrics, synthetic data and training.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
pub mod ablation;
pub mod blocks;
pub mod data;
pub mod flt;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod param;
pub mod real;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Activation, Gradients, Graph, Var};
pub use param::{ParamId, ParamStore, Parameter};
pub use real::{DType, Real};
pub use tensor::Tensor;
