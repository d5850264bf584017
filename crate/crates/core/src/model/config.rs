use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture of the dual encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub vision_layers: usize,
    pub vision_heads: usize,
    pub vision_dim: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub text_dim: usize,
    /// Filled from the vocabulary when a model is built for a dataset.
    pub vocab_size: usize,
    pub context_length: usize,
    pub embed_dim: usize,
    pub mlp_ratio: usize,
    /// Initial value of `exp(log_temperature)`, i.e. `1/τ`.
    pub logit_scale_init: f64,
}

pub const LOGIT_SCALE_MIN: f64 = 1.0;
pub const LOGIT_SCALE_MAX: f64 = 100.0;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            vision_layers: 2,
            vision_heads: 4,
            vision_dim: 64,
            text_layers: 2,
            text_heads: 4,
            text_dim: 64,
            vocab_size: 64,
            context_length: 32,
            embed_dim: 64,
            mlp_ratio: 4,
            logit_scale_init: 1.0 / 0.07,
        }
    }
}

impl ModelConfig {
    /// ViT-B/16-sized configuration at 224 px.
    pub fn vit_b16() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            vision_layers: 12,
            vision_heads: 12,
            vision_dim: 768,
            text_layers: 12,
            text_heads: 8,
            text_dim: 512,
            vocab_size: 64,
            context_length: 77,
            embed_dim: 512,
            mlp_ratio: 4,
            logit_scale_init: 1.0 / 0.07,
        }
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("vision_layers", self.vision_layers),
            ("vision_heads", self.vision_heads),
            ("vision_dim", self.vision_dim),
            ("text_layers", self.text_layers),
            ("text_heads", self.text_heads),
            ("text_dim", self.text_dim),
            ("vocab_size", self.vocab_size),
            ("context_length", self.context_length),
            ("embed_dim", self.embed_dim),
            ("mlp_ratio", self.mlp_ratio),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Contract(format!("model.{name} must be positive")));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Contract(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.vision_dim.is_multiple_of(self.vision_heads) || !self.text_dim.is_multiple_of(self.text_heads) {
            return Err(Error::Contract(
                "encoder width must be divisible by its head count".into(),
            ));
        }
        if self.context_length < 2 {
            return Err(Error::Contract("context_length must hold BOS and EOS".into()));
        }
        if !(LOGIT_SCALE_MIN..=LOGIT_SCALE_MAX).contains(&self.logit_scale_init) {
            return Err(Error::Contract(format!(
                "logit_scale_init {} outside [{LOGIT_SCALE_MIN}, {LOGIT_SCALE_MAX}]",
                self.logit_scale_init
            )));
        }
        Ok(())
    }
}
