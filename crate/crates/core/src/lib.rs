pub mod app;
pub mod config;
pub mod crg;
pub mod encoder;
pub mod error;
pub mod eval_metrics;
pub mod gridworld;
pub mod policy;
pub mod pretrain;
pub mod tensor;
pub mod tsr;

pub use config::ModelConfig;
pub use error::{Error, Result};
