use serde::{Deserialize, Serialize};

use crate::numerics::{adam_step, AdamState, Rng, Scalar, Tensor};
use crate::raster::Raster;
use crate::synthdata::{augment_caption, augment_image, AugmentOp, Dataset};
use crate::{Error, Result};

use super::clip::ClipModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Random flip/rotation and caption reordering per sample and epoch.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 3e-4,
            seed: 42,
            augment: true,
        }
    }
}

impl TrainConfig {
    /// Low learning rate for fine-tuning a pretrained-scale model.
    pub fn fine_tune() -> Self {
        Self {
            lr: 1e-5,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

/// Per-epoch metrics, in order.
pub type TrainLog = Vec<EpochLog>;

/// Samples drawn by stream `(seed, epoch)` for the permutation and
/// `(seed ^ epoch-tag, index)` for augmentation.
fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive(seed, epoch as u64).shuffle(&mut order);
    order
}

fn augmented_sample(data: &Dataset, index: usize, seed: u64, epoch: usize) -> Result<(Raster, Vec<u32>)> {
    let pair = &data.pairs[index];
    let mut rng = Rng::derive(
        seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(epoch as u64 + 1)),
        index as u64,
    );
    let pick = rng.below(AugmentOp::ALL.len() + 1);
    let image = match AugmentOp::ALL.get(pick) {
        Some(&op) => augment_image(&pair.image, op)?,
        None => pair.image.clone(),
    };
    let caption = augment_caption(&pair.caption, &mut rng)?;
    let tokens = data.vocab.tokenize(&caption, data.context_length)?;
    Ok((image, tokens))
}

/// Contrastive training with Adam.
///
/// Each epoch visits the training pairs in a seeded permutation, in batches
/// of `batch_size` (a trailing batch of one sample carries no contrastive
/// signal and is skipped). `exp(log_temperature)` is clamped after every
/// step. Training accuracy is measured on each batch before its update, by
/// classifying the batch images against the class prompts.
pub fn train<T: Scalar>(
    model: &mut ClipModel<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Contract("batch_size must be at least 2".into()));
    }
    if data.classes.is_empty() {
        return Err(Error::Contract("dataset has no class prompts".into()));
    }
    let prompts = data.class_prompts();
    let mut state = AdamState::for_params(model.params().tensors());
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, data.len());
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let samples: Vec<(Raster, Vec<u32>)> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augmented_sample(data, i, cfg.seed, epoch)
                    } else {
                        Ok((data.pairs[i].image.clone(), data.pairs[i].tokens.clone()))
                    }
                })
                .collect::<Result<_>>()?;
            let images: Vec<&Raster> = samples.iter().map(|s| &s.0).collect();
            let texts: Vec<Vec<u32>> = samples.iter().map(|s| s.1.clone()).collect();

            let step = model.loss_and_grads(&images, &texts)?;
            let prompt_emb = model.encode_texts(&prompts)?;
            for (emb, &i) in step.image_embeddings.iter().zip(chunk) {
                let emb = Tensor::new(vec![emb.len()], emb.clone())?;
                let probs = model.classify_embedding(&emb, &prompt_emb)?;
                correct += usize::from(argmax(&probs) == data.pairs[i].class_id);
            }
            seen += chunk.len();
            loss_sum += step.loss.as_f64();
            batches += 1;

            adam_step(model.params_mut().tensors_mut(), &step.grads, &mut state, cfg.lr)?;
            model.clamp_temperature();
            if model.params().tensors().iter().any(|t| !t.is_finite()) {
                return Err(crate::numerics::NumericsError::NonFinite { op: "adam_step" }.into());
            }
        }
        let entry = EpochLog {
            epoch,
            loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            train_acc: if seen > 0 { correct as f64 / seen as f64 } else { 0.0 },
        };
        log::info!("epoch {epoch}: loss {:.4} train_acc {:.3}", entry.loss, entry.train_acc);
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Index of the largest value; first one wins ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
