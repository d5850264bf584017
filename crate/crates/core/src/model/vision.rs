use crate::numerics::{kernels, Result, Rng, Scalar, Tape, Tensor, Var};
use crate::raster::Raster;

use super::config::ModelConfig;
use super::layers::{Block, BlockTrace, LayerNorm, Linear};
use super::params::{Binder, ParamId, ParamStore};

/// Pixel normalization applied before patch embedding: `(v - MEAN) / STD`.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// ViT image encoder: linear patch embedding, class token, learned positions,
/// pre-norm blocks, LayerNorm on the class token, linear projection to D.
#[derive(Debug, Clone)]
pub struct VisionEncoder {
    pub patch_embed: Linear,
    pub class_token: ParamId,
    pub positions: ParamId,
    pub blocks: Vec<Block>,
    pub ln_post: LayerNorm,
    pub proj: ParamId,
    pub patch_size: usize,
    pub grid: usize,
    pub dim: usize,
    pub heads: usize,
}

/// Tape handles from one image forward pass.
#[derive(Debug, Clone, Copy)]
pub struct VisionTrace {
    /// Projected class token before normalization, `[1 × D]`.
    pub embedding: Var,
    pub last_block: BlockTrace,
}

/// Cached internals of the final vision block, in plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderActivations<T: Scalar = f32> {
    /// Patch rows of the final block's LayerNorm-1 output, `[P × d_v]`.
    pub patch_tokens: Tensor<T>,
    /// Final-block value vectors through the attention output projection and
    /// the embedding projection, `[P × D]`.
    pub value_features: Tensor<T>,
    /// Class-token query of the final block, `[heads × d_head]`.
    pub cls_query: Tensor<T>,
    /// Patch keys of the final block, `[P × heads × d_head]`.
    pub keys: Tensor<T>,
    /// Patch grid `(rows, cols)`.
    pub grid: (usize, usize),
}

impl VisionEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let d = cfg.vision_dim;
        let patch_embed = Linear::new(store, "vision.patch_embed", cfg.patch_dim(), d, 1.0, true, rng);
        let class_token = store.normal("vision.class_token", &[1, d], 0.02, rng);
        let positions = store.normal("vision.positions", &[cfg.num_patches() + 1, d], 0.02, rng);
        let blocks = (0..cfg.vision_layers)
            .map(|i| {
                Block::new(
                    store,
                    &format!("vision.blocks.{i}"),
                    d,
                    cfg.vision_heads,
                    cfg.mlp_ratio,
                    cfg.vision_layers,
                    rng,
                )
            })
            .collect();
        let ln_post = LayerNorm::new(store, "vision.ln_post", d);
        let proj = store.normal("vision.proj", &[d, cfg.embed_dim], 1.0 / (d as f64).sqrt(), rng);
        Self {
            patch_embed,
            class_token,
            positions,
            blocks,
            ln_post,
            proj,
            patch_size: cfg.patch_size,
            grid: cfg.grid_side(),
            dim: d,
            heads: cfg.vision_heads,
        }
    }

    /// Flattens non-overlapping patches in grid row-major order; within a
    /// patch, pixels are row-major with RGB interleaved.
    pub fn patchify<T: Scalar>(&self, image: &Raster) -> Vec<T> {
        let ps = self.patch_size;
        let mean = PIXEL_MEAN as f32;
        let inv_std = (1.0 / PIXEL_STD) as f32;
        let mut out = Vec::with_capacity(self.grid * self.grid * ps * ps * 3);
        for gy in 0..self.grid {
            for gx in 0..self.grid {
                for dy in 0..ps {
                    for dx in 0..ps {
                        for c in image.get(gy * ps + dy, gx * ps + dx) {
                            out.push(T::from_f64_lossy(f64::from((c - mean) * inv_std)));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Binder<'_, T>, image: &Raster) -> Result<VisionTrace> {
        let n = self.grid * self.grid;
        let patches = tape.constant(&[n, self.patch_size * self.patch_size * 3], self.patchify(image));
        let tokens = self.patch_embed.forward(tape, p, patches)?;
        let cls = p.get(tape, self.class_token);
        let x = tape.concat_rows(cls, tokens)?;
        let pos = p.get(tape, self.positions);
        let mut x = tape.add(x, pos)?;
        let mut last = None;
        for block in &self.blocks {
            let trace = block.forward(tape, p, x, false)?;
            x = trace.output;
            last = Some(trace);
        }
        let cls_out = tape.slice_rows(x, 0, 1)?;
        let cls_out = self.ln_post.forward(tape, p, cls_out)?;
        let proj = p.get(tape, self.proj);
        let embedding = tape.matmul(cls_out, proj)?;
        Ok(VisionTrace {
            embedding,
            last_block: last.expect("at least one vision block"),
        })
    }

    /// Copies the final block's internals out of the tape.
    pub fn activations<T: Scalar>(
        &self,
        tape: &Tape<T>,
        params: &ParamStore<T>,
        trace: &VisionTrace,
    ) -> EncoderActivations<T> {
        let n = self.grid * self.grid;
        let d = self.dim;
        let dh = d / self.heads;
        let normed = tape.value(trace.last_block.normed);
        let qkv = tape.value(trace.last_block.qkv);
        let patch_tokens = normed[d..].to_vec();

        let cls_query = qkv[..d].to_vec();
        let mut keys = Vec::with_capacity(n * d);
        let mut values = Vec::with_capacity(n * d);
        for i in 1..=n {
            let row = &qkv[i * 3 * d..(i + 1) * 3 * d];
            keys.extend_from_slice(&row[d..2 * d]);
            values.extend_from_slice(&row[2 * d..]);
        }
        let block = self.blocks.last().expect("at least one vision block");
        let w_out = params.get(block.attn.out.weight).data();
        let w_proj = params.get(self.proj);
        let embed_dim = w_proj.shape()[1];
        let through_out = kernels::matmul(&values, w_out, n, d, d);
        let value_features = kernels::matmul(&through_out, w_proj.data(), n, d, embed_dim);

        EncoderActivations {
            patch_tokens: Tensor::new(vec![n, d], patch_tokens).expect("dims"),
            value_features: Tensor::new(vec![n, embed_dim], value_features).expect("dims"),
            cls_query: Tensor::new(vec![self.heads, dh], cls_query).expect("dims"),
            keys: Tensor::new(vec![n, self.heads, dh], keys).expect("dims"),
            grid: (self.grid, self.grid),
        }
    }
}
