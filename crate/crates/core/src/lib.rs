//! Channel pruning driven by batch-norm scale factors.
//!
//! The pipeline is: train a CBR (conv, batch norm, relu) network with an L1
//! penalty on every batch-norm scale, rank all scales network-wide, remove
//! the smallest fraction of channels (optionally rounding each layer's
//! survivors up to a multiple of 8), fold the removed channels' constant
//! output into the next layer's bias, and fine-tune.

pub mod ablation;
pub mod augment;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod prune;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::Error;
pub use tensor::{Real, Tensor};
