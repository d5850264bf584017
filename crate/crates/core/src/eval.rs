//! Classification and retrieval metrics.
//!
//! Precision, recall, F1 and specificity are macro averages over all `K`
//! classes, each class treated one-vs-rest. A class with no predicted
//! positives has precision 0; a class with no true items has recall 0. F1 is
//! the mean of per-class F1 scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::explain::{upsample_map, SaliencyMap};
use crate::model::{contrastive_loss, train::argmax, ClipModel};
use crate::numerics::{cosine_similarity, Scalar, Tensor};
use crate::raster::{Mask, Raster};
use crate::synthdata::Dataset;
use crate::{Error, Result};

/// `counts[t][p]` = items of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::Contract("confusion matrix must be square".into()));
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }

    fn true_positive(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    fn actual(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn precision(&self, c: usize) -> f64 {
        ratio(self.true_positive(c), self.predicted(c))
    }

    pub fn recall(&self, c: usize) -> f64 {
        ratio(self.true_positive(c), self.actual(c))
    }

    /// `TN / (TN + FP)` for class `c` against the rest.
    pub fn specificity(&self, c: usize) -> f64 {
        let fp = self.predicted(c) - self.true_positive(c);
        let tn = self.total() - self.actual(c) - fp;
        ratio(tn, tn + fp)
    }

    pub fn f1(&self, c: usize) -> f64 {
        let (p, r) = (self.precision(c), self.recall(c));
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    fn macro_avg(&self, f: impl Fn(&Self, usize) -> f64) -> f64 {
        let k = self.classes();
        if k == 0 {
            return 0.0;
        }
        (0..k).map(|c| f(self, c)).sum::<f64>() / k as f64
    }

    pub fn macro_precision(&self) -> f64 {
        self.macro_avg(Self::precision)
    }

    pub fn macro_recall(&self) -> f64 {
        self.macro_avg(Self::recall)
    }

    pub fn macro_specificity(&self) -> f64 {
        self.macro_avg(Self::specificity)
    }

    pub fn macro_f1(&self) -> f64 {
        self.macro_avg(Self::f1)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub clip_score: f64,
    #[serde(rename = "n")]
    pub n_samples: usize,
    #[serde(skip)]
    pub batch_size: usize,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn from_confusion(confusion: &ConfusionMatrix, loss: f64, clip_score: f64, batch_size: usize) -> Self {
        let recall = confusion.macro_recall();
        Self {
            accuracy: confusion.accuracy(),
            loss,
            precision: confusion.macro_precision(),
            recall,
            f1: confusion.macro_f1(),
            sensitivity: recall,
            specificity: confusion.macro_specificity(),
            clip_score,
            n_samples: confusion.total() as usize,
            batch_size,
            confusion: confusion.counts.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Cosine between an image and a text embedding, no temperature.
pub fn clip_score<T: Scalar>(image: &[T], text: &[T]) -> Result<T> {
    Ok(cosine_similarity(image, text)?)
}

/// Mean matched-pair CLIP score over a dataset.
pub fn mean_clip_score(model: &ClipModel<f32>, data: &Dataset) -> Result<f64> {
    let (images, texts) = embed_pairs(model, data)?;
    mean_matched(&images, &texts)
}

fn mean_matched(images: &[Tensor<f32>], texts: &[Tensor<f32>]) -> Result<f64> {
    let mut sum = 0.0;
    for (a, b) in images.iter().zip(texts) {
        sum += f64::from(clip_score(a.data(), b.data())?);
    }
    Ok(sum / images.len().max(1) as f64)
}

type Embeddings = Vec<Tensor<f32>>;

fn embed_pairs(model: &ClipModel<f32>, data: &Dataset) -> Result<(Embeddings, Embeddings)> {
    let images: Vec<&Raster> = data.pairs.iter().map(|p| &p.image).collect();
    let tokens: Vec<Vec<u32>> = data.pairs.iter().map(|p| p.tokens.clone()).collect();
    Ok((model.image_embeddings(&images)?, model.encode_texts(&tokens)?))
}

/// Predicted class for each pair, by [`ClipModel::classify_embedding`].
pub fn predict(model: &ClipModel<f32>, data: &Dataset) -> Result<Vec<usize>> {
    let images: Vec<&Raster> = data.pairs.iter().map(|p| &p.image).collect();
    let embeddings = model.image_embeddings(&images)?;
    let prompts = model.encode_texts(&data.class_prompts())?;
    embeddings
        .par_iter()
        .map(|e| Ok(argmax(&model.classify_embedding(e, &prompts)?)))
        .collect()
}

/// Metrics over `data` in its stored order.
///
/// The loss averages the contrastive loss of consecutive batches of
/// `batch_size`; a trailing single-item batch is left out unless it is the
/// only one.
pub fn evaluate(model: &ClipModel<f32>, data: &Dataset, batch_size: usize) -> Result<(MetricsReport, ConfusionMatrix)> {
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Contract("batch_size must be positive".into()));
    }
    let (images, texts) = embed_pairs(model, data)?;
    let prompts = model.encode_texts(&data.class_prompts())?;

    let mut confusion = ConfusionMatrix::new(data.classes.len());
    for (emb, pair) in images.iter().zip(&data.pairs) {
        let probs = model.classify_embedding(emb, &prompts)?;
        confusion.record(pair.class_id, argmax(&probs));
    }

    let batches: Vec<(usize, usize)> = (0..data.len())
        .step_by(batch_size)
        .map(|s| (s, (s + batch_size).min(data.len())))
        .filter(|&(s, e)| e - s > 1 || data.len() == 1)
        .collect();
    let mut loss_sum = 0.0;
    for &(s, e) in &batches {
        let logits = model.scaled_cosines(&images[s..e], &texts[s..e])?;
        loss_sum += f64::from(contrastive_loss(&logits)?);
    }
    let loss = loss_sum / batches.len() as f64;
    let clip = mean_matched(&images, &texts)?;
    Ok((
        MetricsReport::from_confusion(&confusion, loss, clip, batch_size),
        confusion,
    ))
}

/// Fraction of top-decile saliency mass that falls inside `mask`.
///
/// The map is upsampled bilinearly to the mask size; pixels at or above the
/// 90th percentile of the upsampled values form the top decile, and their
/// summed values are split by mask membership. Returns 0 for an all-zero map.
pub fn top_decile_mass_inside(map: &SaliencyMap, mask: &Mask) -> f64 {
    let values = upsample_map(map, mask.height(), mask.width());
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted[((sorted.len() as f64) * 0.9).floor() as usize].max(f64::MIN_POSITIVE);
    let (mut inside, mut total) = (0.0, 0.0);
    for (&v, &m) in values.iter().zip(mask.data()) {
        if v >= cut {
            total += v;
            if m {
                inside += v;
            }
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_predicted_class_zero() {
        let cm = ConfusionMatrix::from_counts(vec![vec![5, 0], vec![5, 0]]).unwrap();
        assert_eq!(cm.accuracy(), 0.5);
        assert_eq!(cm.macro_precision(), 0.25);
        assert_eq!(cm.macro_recall(), 0.5);
        assert_eq!(cm.macro_specificity(), 0.5);
    }

    #[test]
    fn perfect_predictor() {
        let cm = ConfusionMatrix::from_counts(vec![vec![3, 0, 0], vec![0, 4, 0], vec![0, 0, 2]]).unwrap();
        assert_eq!(cm.accuracy(), 1.0);
        assert_eq!(cm.macro_f1(), 1.0);
        assert_eq!(cm.macro_specificity(), 1.0);
    }

    #[test]
    fn binary_specificity_is_swapped_recall() {
        let cm = ConfusionMatrix::from_counts(vec![vec![7, 3], vec![2, 8]]).unwrap();
        let swapped = ConfusionMatrix::from_counts(vec![vec![8, 2], vec![3, 7]]).unwrap();
        assert!((cm.macro_specificity() - swapped.macro_recall()).abs() < 1e-15);
        assert!((cm.specificity(0) - cm.recall(1)).abs() < 1e-15);
    }

    #[test]
    fn top_decile_mass_counts_hot_region() {
        use crate::explain::Method;
        // Hot top-left patch of a 2x2 grid on a 4x4 mask covering the left half.
        let map = SaliencyMap::raw(Method::GradCam, "x", (2, 2), vec![1.0, 0.0, 0.0, 0.0]);
        let mut mask = Mask::empty(4, 4);
        for y in 0..4 {
            for x in 0..2 {
                mask.set(y, x, true);
            }
        }
        assert_eq!(top_decile_mass_inside(&map, &mask), 1.0);
        let zero = SaliencyMap::raw(Method::GradCam, "x", (2, 2), vec![0.0; 4]);
        assert_eq!(top_decile_mass_inside(&zero, &mask), 0.0);
    }

    #[test]
    fn clip_score_delegates() {
        assert_eq!(clip_score(&[1.0f32, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let a = [0.3f32, -0.2, 0.9];
        assert_eq!(clip_score(&a, &a).unwrap(), cosine_similarity(&a, &a).unwrap());
        assert!(clip_score(&[0.0f32, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn report_json_schema() {
        let cm = ConfusionMatrix::from_counts(vec![vec![1, 0], vec![1, 1]]).unwrap();
        let r = MetricsReport::from_confusion(&cm, 0.7, 0.4, 64);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut expected = vec![
            "accuracy",
            "loss",
            "precision",
            "recall",
            "f1",
            "sensitivity",
            "specificity",
            "clip_score",
            "n",
            "confusion",
        ];
        let mut keys_sorted = keys.clone();
        keys_sorted.sort_unstable();
        expected.sort_unstable();
        assert_eq!(keys_sorted, expected);
        assert_eq!(v["n"], 3);
        assert_eq!(v["sensitivity"], v["recall"]);
    }
}
