pub mod ablation;
pub mod align;
pub mod bev;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod label;
pub mod mars;
pub mod nn;
pub mod render;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
