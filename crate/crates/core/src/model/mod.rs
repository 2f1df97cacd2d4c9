//! The joint slot-filling and intent network.

mod config;
mod joint;
pub mod layers;
mod params;

pub use config::{Aggregator, Mode, ModelConfig, SparsityConfig};
pub use joint::{
    run_batch, BatchRun, JointModel, LossBreakdown, LossPart, Prediction, RunOptions, TagFeed,
};
pub use layers::StepState;
pub use params::{param_layout, ConvBank, Linear, ModelParams, ParamKind};
