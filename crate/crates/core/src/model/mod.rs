//! Encoder–decoder with separable temporal/spatial attention.

mod config;
mod forward;
pub mod layers;
mod params;

pub use config::ModelConfig;
pub use forward::{bind, forward, forward_autoregressive, forward_teacher_forced, DecoderInput, Mode};
pub use params::{DecLayerIds, EncLayerIds, FeedForwardIds, Layout, LinearIds, MhaIds, ModelParams, NamedTensor, NormIds, ParamGroup};
