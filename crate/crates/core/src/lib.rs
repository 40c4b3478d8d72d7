pub mod annotations;
pub mod classify;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod order;
pub mod pipeline;
pub mod qc;
pub mod raster;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};
