//! Zero-shot video deraining with a toy joint-attention diffusion
//! transformer: DDPM inversion, negative-prompt guidance and key/value
//! attention switching, checked on procedurally generated rain.

pub mod analysis;
pub mod attention_control;
pub mod config;
pub mod container;
pub mod denoiser;
pub mod error;
pub mod guidance;
pub mod inversion;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod sampling;
pub mod schedule;
pub mod synthetic_rain;
pub mod text;
pub mod video;

pub use attention_control::{AttentionControl, BlockSelection, ControlMode};
pub use config::RunConfig;
pub use container::TensorContainer;
pub use denoiser::{Denoiser, DenoiserConfig, HiddenState};
pub use error::{Error, Result};
pub use guidance::{GuidanceSpec, PromptMode};
pub use inversion::InversionRecord;
pub use manifest::{Manifest, RunStatus};
pub use metrics::{FlowField, MetricsReport};
pub use pipeline::{DerainOptions, DerainOutput, InvertWith};
pub use schedule::{NoiseSchedule, Timestep};
pub use synthetic_rain::{RainSceneSpec, SceneBundle};
pub use text::{TextCondition, TokenId};
pub use video::{LatentVideo, VideoShape};
