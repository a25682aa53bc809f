//! Attentive cross-modal relevance matching for moment retrieval in video.

pub mod attention;
pub mod data;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod interaction;
pub mod model;
pub mod numerics;
pub mod prediction;

pub use error::{Error, Result};
pub use harness::{Checkpoint, ModelConfig};
pub use model::Acrm;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
