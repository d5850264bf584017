//! Toy CLIP-style dual encoder: ViT image tower, causal text tower pooled at
//! the end token, learned temperature, contrastive training.

pub mod clip;
pub mod config;
pub mod layers;
pub mod params;
pub mod text;
pub mod train;
pub mod vision;

pub use clip::{contrastive_loss, contrastive_loss_on_tape, ClipModel, StepOutput};
pub use config::{ModelConfig, LOGIT_SCALE_MAX, LOGIT_SCALE_MIN};
pub use params::{Binder, ParamId, ParamStore};
pub use train::{argmax, train, EpochLog, TrainConfig, TrainLog};
pub use vision::{EncoderActivations, VisionTrace, PIXEL_MEAN, PIXEL_STD};
