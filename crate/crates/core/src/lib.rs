pub mod anomaly_scorer;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod imageio;
pub mod nn;
pub mod patch_pipeline;
pub mod synth_benchmark;
pub mod tensor;
pub mod training;
pub mod translator;

pub use error::{Error, Result};
