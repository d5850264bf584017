//! Transformer building blocks recorded onto a [`Tape`].

use crate::numerics::{Result, Rng, Scalar, Tape, Var};

use super::params::{Binder, ParamId, ParamStore};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    /// Weight `[fan_in × fan_out]` drawn from N(0, gain²/fan_in).
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let std = gain / (fan_in as f64).sqrt();
        let weight = store.normal(&format!("{name}.weight"), &[fan_in, fan_out], std, rng);
        let bias = bias.then(|| store.constant(&format!("{name}.bias"), &[fan_out], 0.0));
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Binder<'_, T>, x: Var) -> Result<Var> {
        let w = p.get(tape, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = p.get(tape, b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.constant(&format!("{name}.gamma"), &[dim], 1.0),
            beta: store.constant(&format!("{name}.beta"), &[dim], 0.0),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Binder<'_, T>, x: Var) -> Result<Var> {
        let g = p.get(tape, self.gamma);
        let b = p.get(tape, self.beta);
        tape.layer_norm(x, g, b, T::from_f64_lossy(LN_EPS))
    }
}

/// Multi-head self-attention with a fused QKV projection.
#[derive(Debug, Clone)]
pub struct Attention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Returns `(output, qkv)`; `qkv` is `[n × 3·dim]` laid out as Q | K | V.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &mut Binder<'_, T>,
        x: Var,
        causal: bool,
    ) -> Result<(Var, Var)> {
        let qkv = self.qkv.forward(tape, p, x)?;
        let dh = self.head_dim();
        let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = tape.slice_cols(qkv, h * dh, dh)?;
            let k = tape.slice_cols(qkv, self.dim + h * dh, dh)?;
            let v = tape.slice_cols(qkv, 2 * self.dim + h * dh, dh)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.softmax(scores, causal)?;
            outs.push(tape.matmul(attn, v)?);
        }
        let merged = tape.concat_cols(&outs)?;
        Ok((self.out.forward(tape, p, merged)?, qkv))
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Handles to a block's intermediate nodes.
#[derive(Debug, Clone, Copy)]
pub struct BlockTrace {
    /// Output of the first LayerNorm (the tokens attention reads).
    pub normed: Var,
    pub qkv: Var,
    pub output: Var,
}

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        depth: usize,
        rng: &mut Rng,
    ) -> Self {
        // Residual-branch outputs are damped by depth.
        let residual_gain = 1.0 / ((2 * depth) as f64).sqrt();
        let hidden = dim * mlp_ratio;
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: Attention {
                qkv: Linear::new(store, &format!("{name}.attn.qkv"), dim, 3 * dim, 1.0, true, rng),
                out: Linear::new(store, &format!("{name}.attn.out"), dim, dim, residual_gain, true, rng),
                heads,
                dim,
            },
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            mlp: Mlp {
                fc1: Linear::new(store, &format!("{name}.mlp.fc1"), dim, hidden, 1.0, true, rng),
                fc2: Linear::new(store, &format!("{name}.mlp.fc2"), hidden, dim, residual_gain, true, rng),
            },
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &mut Binder<'_, T>,
        x: Var,
        causal: bool,
    ) -> Result<BlockTrace> {
        let normed = self.ln1.forward(tape, p, x)?;
        let (attn, qkv) = self.attn.forward(tape, p, normed, causal)?;
        let x = tape.add(x, attn)?;
        let h = self.ln2.forward(tape, p, x)?;
        let h = self.mlp.fc1.forward(tape, p, h)?;
        let h = tape.gelu(h)?;
        let h = self.mlp.fc2.forward(tape, p, h)?;
        let output = tape.add(x, h)?;
        Ok(BlockTrace { normed, qkv, output })
    }
}
