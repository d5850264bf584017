//! Synthetic dermoscopy-like data: lesion generator, tokenizer, augmentation,
//! splitting and on-disk dataset I/O.

pub mod augment;
pub mod dataset;
pub mod lesion;
pub mod vocab;

pub use augment::{augment_caption, augment_image, augment_mask, parse_caption, AugmentOp};
pub use dataset::{
    dedupe, generate_dataset, generate_pair, ingest_external, jittered_spec, split_dataset, ClassInfo, Dataset,
    ImageTextPair, ManifestEntry, Split, SynthConfig,
};
pub use lesion::{class_template, saturation_contrast, LesionColor, LesionSpec, Structure, MAX_CLASSES};
pub use vocab::{normalize_text, TokenSeq, Vocabulary, BOS, EOS, PAD};
