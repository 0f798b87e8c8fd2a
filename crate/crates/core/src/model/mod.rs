//! Backbone assembly: stage and model configurations, presets, parameter
//! construction, the forward pass and 2D→3D inflation.

mod build;
mod config;
mod inflate;

pub use build::{build_model, Model, ModelOutput};
pub use config::{build_hybrid_stage3, stage_type_presets, HybridStage, InputSpec, ModelConfig, StageConfig, PRESETS};
pub use inflate::{inflate_2d_to_3d, inflate_params, inflate_weight, TemporalKernels};
