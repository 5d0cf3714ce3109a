//! Training-free few-shot binary segmentation from bounding-box annotations.
//!
//! Support images are encoded offline into feature maps; box annotations are
//! turned into patch labels; a small set of unit prototypes (one foreground,
//! a growing mixture of backgrounds) is fitted by alternating assignment and
//! mean updates; query feature maps are classified per patch, upsampled to
//! image resolution and thresholded by argmax.

pub mod annotation;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod feature_store;
pub mod inference;
pub mod mask;
pub mod prototypes;
pub mod synth;

pub use error::{PromiError, Result};
