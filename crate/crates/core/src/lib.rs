pub mod config;
pub mod lf;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub use config::{Preset, RunConfig, SynthConfig, TrainConfig};
pub use lf::{LfError, LfShape, LightField};
pub use model::{ModelConfig, ModelError, ModelParams};
