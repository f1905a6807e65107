//! Guided Zoom: refine a classifier's top-k decision by checking whether the
//! evidence behind each candidate class looks like evidence seen for that
//! class during training.
//!
//! The crate contains a small CPU neural-network stack ([`nn`], [`model`]),
//! three saliency methods ([`grounding`]), evidence-pool construction by
//! adversarial erasing ([`pool`]), decision refinement ([`refine`]), a
//! procedural fine-grained dataset ([`data`]) and the batch front end
//! ([`cli`]).

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod grounding;
pub mod image;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod pnm;
pub mod pool;
pub mod refine;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use image::Image;
pub use tensor::Tensor;
