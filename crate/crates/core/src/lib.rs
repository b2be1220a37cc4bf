//! Pseudo label-wise attention for multi-label text classification.

pub mod attention;
pub mod cost;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
