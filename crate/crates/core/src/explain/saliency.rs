//! Patch-level saliency for an image-caption pair.
//!
//! All three methods explain `cos(f_I, f_T)`, where `f_I` is the projected
//! (pre-normalization) image embedding and `f_T` the caption embedding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{Binder, ClipModel, EncoderActivations};
use crate::numerics::{Tape, Tensor};
use crate::raster::Raster;
use crate::{Error, Result};

use super::entropy::{bounds, entropy_weights, local_entropy_fast, to_gray, EntropyNormalization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MedgradEclip,
    GradEclip,
    GradCam,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MedgradEclip, Method::GradEclip, Method::GradCam];

    pub fn name(self) -> &'static str {
        match self {
            Method::MedgradEclip => "medgrad-eclip",
            Method::GradEclip => "grad-eclip",
            Method::GradCam => "grad-cam",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::Parse(format!("unknown method '{s}'; valid methods: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Raw,
    Minmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    pub disk_radius: usize,
    pub bins: usize,
    pub entropy_normalization: EntropyNormalization,
    pub overlay_alpha: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            disk_radius: 5,
            bins: 32,
            entropy_normalization: EntropyNormalization::Minmax,
            overlay_alpha: 0.5,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.disk_radius < 1 || self.bins < 2 {
            return Err(Error::Contract(format!(
                "explain config needs disk_radius >= 1 and bins >= 2, got {} and {}",
                self.disk_radius, self.bins
            )));
        }
        if !(0.0..=1.0).contains(&self.overlay_alpha) {
            return Err(Error::Contract(format!(
                "overlay_alpha {} not in [0, 1]",
                self.overlay_alpha
            )));
        }
        Ok(())
    }
}

/// Nonnegative relevance per patch, row-major over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub method: Method,
    pub caption: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub normalization: Normalization,
}

/// Sidecar JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub method: String,
    pub caption: String,
    pub grid: [usize; 2],
    pub values: Vec<Vec<f64>>,
}

impl SaliencyMap {
    pub fn raw(method: Method, caption: &str, grid: (usize, usize), values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.0 * grid.1);
        Self {
            method,
            caption: caption.to_string(),
            rows: grid.0,
            cols: grid.1,
            values,
            normalization: Normalization::Raw,
        }
    }

    /// Minmax to `[0, 1]`. All-zero stays all-zero; a constant positive map
    /// becomes all ones.
    pub fn normalized(mut self) -> Self {
        self.values = minmax_saliency(&self.values);
        self.normalization = Normalization::Minmax;
        self
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            method: self.method.name().to_string(),
            caption: self.caption.clone(),
            grid: [self.rows, self.cols],
            values: self.values.chunks(self.cols).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&self.sidecar()).expect("sidecar serializes")
    }
}

pub fn minmax_saliency(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = bounds(values);
    if hi > lo {
        values.iter().map(|&v| (v - lo) / (hi - lo)).collect()
    } else if hi > 0.0 {
        vec![1.0; values.len()]
    } else {
        vec![0.0; values.len()]
    }
}

/// `H_i = ReLU(w(i) · Σ_c w_c v_ic)`. Since the spatial weight does not
/// depend on `c` it is applied after the channel sum.
pub fn weighted_channel_map(value_features: &[f64], channel_weights: &[f64], spatial: &[f64]) -> Vec<f64> {
    let d = channel_weights.len();
    value_features
        .chunks(d)
        .zip(spatial)
        .map(|(v, &s)| relu(s * channel_sum(v, channel_weights)))
        .collect()
}

/// `ReLU(Σ_c w_c v_ic)` with no spatial weighting.
pub fn unweighted_channel_map(value_features: &[f64], channel_weights: &[f64]) -> Vec<f64> {
    value_features
        .chunks(channel_weights.len())
        .map(|v| relu(channel_sum(v, channel_weights)))
        .collect()
}

fn channel_sum(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).fold(0.0, |acc, (&a, &b)| acc + a * b)
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Grad E-CLIP spatial weight: per patch, `ReLU(cos(q_cls, k_i))` averaged
/// over heads, then minmax-normalized (a constant positive weight becomes 1).
pub fn query_key_weights(cls_query: &[f64], keys: &[f64], heads: usize) -> Vec<f64> {
    let dh = cls_query.len() / heads;
    let per_patch = heads * dh;
    let raw: Vec<f64> = keys
        .chunks(per_patch)
        .map(|k| {
            let mut acc = 0.0;
            for h in 0..heads {
                let q = &cls_query[h * dh..(h + 1) * dh];
                let kh = &k[h * dh..(h + 1) * dh];
                acc += relu(cosine_or_zero(q, kh));
            }
            acc / heads as f64
        })
        .collect();
    // Cosines of parallel vectors can differ in the last bits; treat a spread
    // below rounding level as constant.
    let (lo, hi) = bounds(&raw);
    if hi - lo <= QK_TOLERANCE {
        return if hi > 0.0 {
            vec![1.0; raw.len()]
        } else {
            vec![0.0; raw.len()]
        };
    }
    minmax_saliency(&raw)
}

const QK_TOLERANCE: f64 = 1e-9;

fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na <= 1e-12 || nb <= 1e-12 {
        return 0.0;
    }
    (channel_sum(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// `ReLU(Σ_c α_c A_ic)` with `α_c` the mean over patches of `∂s/∂A_ic`.
pub fn grad_cam_map(tokens: &[f64], grads: &[f64], channels: usize) -> Vec<f64> {
    let p = tokens.len() / channels;
    let mut alpha = vec![0.0; channels];
    for row in grads.chunks(channels) {
        for (a, &g) in alpha.iter_mut().zip(row) {
            *a += g;
        }
    }
    for a in &mut alpha {
        *a /= p as f64;
    }
    tokens.chunks(channels).map(|a| relu(channel_sum(a, &alpha))).collect()
}

/// Everything the gradient methods need from one image-caption pair.
#[derive(Debug, Clone)]
pub struct SimilarityGradient {
    pub activations: EncoderActivations<f32>,
    /// `∂ cos(f_I, f_T) / ∂ f_I`, length D.
    pub channel_weights: Vec<f64>,
    pub similarity: f64,
}

fn to_f64(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

fn check_finite_params(model: &ClipModel<f32>) -> Result<()> {
    if model.params().tensors().iter().any(|t| !t.is_finite()) {
        return Err(crate::numerics::NumericsError::NonFinite { op: "model parameters" }.into());
    }
    Ok(())
}

/// Forward pass with cached activations plus the channel gradient `w_c`.
pub fn similarity_gradient(
    model: &ClipModel<f32>,
    image: &Raster,
    caption_tokens: &[u32],
) -> Result<SimilarityGradient> {
    check_finite_params(model)?;
    let text = model.encode_text(caption_tokens)?;
    let mut tape = Tape::new();
    let mut binder = Binder::new(model.params(), false);
    let trace = model.trace_image(&mut tape, &mut binder, image)?;
    let activations = model.vision.activations(&tape, model.params(), &trace);
    let embedding = tape.tensor(trace.embedding).reshape(&[model.config().embed_dim])?;

    let mut head = Tape::new();
    let a = head.leaf(&embedding.with_grad());
    let b = head.leaf(&text);
    let cos = head.cosine(a, b)?;
    let grads = head.backward(cos)?;
    let channel_weights = grads
        .get_or_zeros(a, model.config().embed_dim)
        .iter()
        .map(|&g| f64::from(g))
        .collect();
    Ok(SimilarityGradient {
        activations,
        channel_weights,
        similarity: f64::from(head.value(cos)[0]),
    })
}

/// Entropy weight per patch for `image`.
pub fn patch_entropy_weights(image: &Raster, grid: (usize, usize), cfg: &ExplainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let map = local_entropy_fast(&to_gray(image), cfg.disk_radius, cfg.bins)?;
    entropy_weights(&map, grid, cfg.entropy_normalization)
}

/// MedGrad E-CLIP with a caller-supplied spatial weight (raw, unnormalized).
pub fn medgrad_eclip_with_weights(
    model: &ClipModel<f32>,
    image: &Raster,
    caption_tokens: &[u32],
    caption: &str,
    weights: &[f64],
) -> Result<SaliencyMap> {
    let sg = similarity_gradient(model, image, caption_tokens)?;
    let grid = sg.activations.grid;
    if weights.len() != grid.0 * grid.1 {
        return Err(Error::Contract(format!(
            "{} spatial weights for a {}x{} grid",
            weights.len(),
            grid.0,
            grid.1
        )));
    }
    let v = to_f64(&sg.activations.value_features);
    let values = weighted_channel_map(&v, &sg.channel_weights, weights);
    Ok(SaliencyMap::raw(Method::MedgradEclip, caption, grid, values))
}

/// Entropy-weighted channel-gradient saliency, minmax-normalized.
pub fn medgrad_eclip(
    model: &ClipModel<f32>,
    image: &Raster,
    caption_tokens: &[u32],
    caption: &str,
    cfg: &ExplainConfig,
) -> Result<SaliencyMap> {
    let grid = (model.config().grid_side(), model.config().grid_side());
    let w_e = patch_entropy_weights(image, grid, cfg)?;
    Ok(medgrad_eclip_with_weights(model, image, caption_tokens, caption, &w_e)?.normalized())
}

/// Same channel-gradient map with the query-key spatial weight.
pub fn grad_eclip(
    model: &ClipModel<f32>,
    image: &Raster,
    caption_tokens: &[u32],
    caption: &str,
) -> Result<SaliencyMap> {
    let sg = similarity_gradient(model, image, caption_tokens)?;
    let acts = &sg.activations;
    let heads = acts.cls_query.shape()[0];
    let w_s = query_key_weights(&to_f64(&acts.cls_query), &to_f64(&acts.keys), heads);
    let v = to_f64(&acts.value_features);
    let values = weighted_channel_map(&v, &sg.channel_weights, &w_s);
    Ok(SaliencyMap::raw(Method::GradEclip, caption, acts.grid, values).normalized())
}

/// Grad-CAM on the final block's patch tokens.
pub fn grad_cam(model: &ClipModel<f32>, image: &Raster, caption_tokens: &[u32], caption: &str) -> Result<SaliencyMap> {
    check_finite_params(model)?;
    let text = model.encode_text(caption_tokens)?;
    let mut tape = Tape::new();
    // Parameters are tracked so that gradients reach intermediate nodes.
    let mut binder = Binder::new(model.params(), true);
    let trace = model.trace_image(&mut tape, &mut binder, image)?;
    let t = tape.leaf(&text);
    let emb = tape.reshape(trace.embedding, &[model.config().embed_dim])?;
    let cos = tape.cosine(emb, t)?;
    let grads = tape.backward(cos)?;

    let normed = trace.last_block.normed;
    let d = tape.shape(normed)[1];
    let all_tokens: Vec<f64> = tape.value(normed).iter().map(|&v| f64::from(v)).collect();
    let all_grads: Vec<f64> = grads
        .get_or_zeros(normed, all_tokens.len())
        .iter()
        .map(|&g| f64::from(g))
        .collect();
    // Row 0 is the class token.
    let values = grad_cam_map(&all_tokens[d..], &all_grads[d..], d);
    let grid = (model.config().grid_side(), model.config().grid_side());
    Ok(SaliencyMap::raw(Method::GradCam, caption, grid, values).normalized())
}

/// Runs `method` with default settings for the non-entropy methods.
pub fn explain(
    method: Method,
    model: &ClipModel<f32>,
    image: &Raster,
    caption_tokens: &[u32],
    caption: &str,
    cfg: &ExplainConfig,
) -> Result<SaliencyMap> {
    match method {
        Method::MedgradEclip => medgrad_eclip(model, image, caption_tokens, caption, cfg),
        Method::GradEclip => grad_eclip(model, image, caption_tokens, caption),
        Method::GradCam => grad_cam(model, image, caption_tokens, caption),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        let err = "lrp".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("medgrad-eclip") && err.contains("grad-cam"));
    }

    #[test]
    fn zero_spatial_weight_gates_patch() {
        let v = [1.0, 2.0, -1.0, 0.5, 3.0, 3.0];
        let w = [0.5, 0.25];
        let map = weighted_channel_map(&v, &w, &[1.0, 0.0, 2.0]);
        assert_eq!(map[1], 0.0);
        assert_eq!(map[0], 1.0);
        assert_eq!(map[2], 2.0 * 2.25);
    }

    #[test]
    fn unit_weight_is_unweighted_map() {
        let v = [0.3, -0.7, 1.1, 0.2, -0.4, -0.9];
        let w = [0.6, -0.8];
        assert_eq!(weighted_channel_map(&v, &w, &[1.0; 3]), unweighted_channel_map(&v, &w));
    }

    #[test]
    fn parallel_keys_give_uniform_ones() {
        let q = [1.0, 2.0, -1.0, 0.5];
        let keys: Vec<f64> = (1..=3).flat_map(|s| q.iter().map(move |v| v * f64::from(s))).collect();
        assert_eq!(query_key_weights(&q, &keys, 2), vec![1.0; 3]);
    }

    #[test]
    fn grad_cam_two_patch_two_channel() {
        // A = [[1, 2], [3, -1]], dA = [[0.5, -1], [1.5, 0]]
        // α = [(0.5+1.5)/2, (-1+0)/2] = [1, -0.5]
        // map = [ReLU(1 - 1), ReLU(3 + 0.5)] = [0, 3.5]
        let map = grad_cam_map(&[1.0, 2.0, 3.0, -1.0], &[0.5, -1.0, 1.5, 0.0], 2);
        assert_eq!(map, vec![0.0, 3.5]);
        assert_eq!(grad_cam_map(&[1.0, 2.0, 3.0, -1.0], &[0.0; 4], 2), vec![0.0, 0.0]);
    }

    #[test]
    fn minmax_cases() {
        assert_eq!(minmax_saliency(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(minmax_saliency(&[2.0, 2.0]), vec![1.0, 1.0]);
        assert_eq!(minmax_saliency(&[0.0, 1.0, 4.0]), vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn sidecar_layout() {
        let m = SaliencyMap::raw(Method::GradCam, "melanoma", (2, 2), vec![0.0, 0.5, 1.0, 0.25]);
        let s: serde_json::Value = serde_json::from_str(&m.sidecar_json()).unwrap();
        assert_eq!(s["method"], "grad-cam");
        assert_eq!(s["grid"], serde_json::json!([2, 2]));
        assert_eq!(s["values"][1][0], 1.0);
    }
}
