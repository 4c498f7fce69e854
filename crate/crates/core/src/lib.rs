pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod label_classifier;
pub mod label_detector;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod subfigure_detector;

pub use error::{Error, Result};
