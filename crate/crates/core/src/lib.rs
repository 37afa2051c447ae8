pub mod autodiff;
pub mod bam;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod models;
pub mod nn;
pub mod profiler;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
