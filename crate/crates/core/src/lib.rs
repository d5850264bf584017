//! Toy CLIP-style dual encoder for dermoscopy-like image/caption pairs, with
//! entropy-weighted gradient saliency (MedGrad E-CLIP) and the Grad E-CLIP
//! and Grad-CAM baselines.
//!
//! Module map:
//! - [`numerics`]: tensors, reverse-mode tape, Adam, seeded RNG
//! - [`model`]: ViT image encoder, transformer text encoder, contrastive training
//! - [`synthdata`]: procedural lesion generator, tokenizer, augmentation, dataset I/O
//! - [`explain`]: local entropy filter and the three saliency methods, overlay rendering
//! - [`eval`]: classification and CLIP-score metrics
//! - [`checkpoint`]: versioned binary model persistence

pub mod checkpoint;
pub mod eval;
pub mod explain;
pub mod model;
pub mod numerics;
pub mod raster;
pub mod synthdata;

mod error;

pub use error::{Error, Result};
