pub mod codec;
pub mod error;
pub mod fsio;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod search;
pub mod synth;
pub mod tearing;

pub use error::{Error, Result};
