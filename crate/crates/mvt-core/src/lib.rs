//! Dense tensor math with tape-based reverse-mode autodiff, the
//! Transformer block primitives built on it, and the multi-view model
//! that composes per-view local encoding with cross-view global encoding.

pub mod attention;
pub mod checkpoint;
pub mod element;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod params;
pub mod tape;
pub mod tensor;

pub use element::{Dtype, Element};
pub use error::{CoreError, Result};
pub use params::ParamStore;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
