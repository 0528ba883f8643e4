pub mod cli;
pub mod domain;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod predictor;
pub mod seed;
pub mod service;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
