//! Self-supervised video and head-motion representation learning at desk scale.

pub mod cli;
pub mod contrastive;
pub mod data;
pub mod encoders;
pub mod eval;
pub mod error;
pub mod numerics;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
