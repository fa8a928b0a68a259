pub mod config;
pub mod error;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
