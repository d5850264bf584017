use crate::numerics::{Rng, Scalar, Tape, Var};
use crate::synthdata::vocab::EOS;
use crate::{Error, Result};

use super::config::ModelConfig;
use super::layers::{Block, LayerNorm};
use super::params::{Binder, ParamId, ParamStore};

/// Causal transformer text encoder pooled at the end-of-text token.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub token_embed: ParamId,
    pub positions: ParamId,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNorm,
    pub proj: ParamId,
    pub vocab_size: usize,
    pub context_length: usize,
}

impl TextEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let d = cfg.text_dim;
        let token_embed = store.normal("text.token_embed", &[cfg.vocab_size, d], 0.02, rng);
        let positions = store.normal("text.positions", &[cfg.context_length, d], 0.01, rng);
        let blocks = (0..cfg.text_layers)
            .map(|i| {
                Block::new(
                    store,
                    &format!("text.blocks.{i}"),
                    d,
                    cfg.text_heads,
                    cfg.mlp_ratio,
                    cfg.text_layers,
                    rng,
                )
            })
            .collect();
        let ln_final = LayerNorm::new(store, "text.ln_final", d);
        let proj = store.normal("text.proj", &[d, cfg.embed_dim], 1.0 / (d as f64).sqrt(), rng);
        Self {
            token_embed,
            positions,
            blocks,
            ln_final,
            proj,
            vocab_size: cfg.vocab_size,
            context_length: cfg.context_length,
        }
    }

    /// Ids up to and including the first EOS. Attention is causal, so the
    /// padding after EOS cannot influence the pooled token and is skipped.
    pub fn active_prefix<'t>(&self, tokens: &'t [u32]) -> Result<&'t [u32]> {
        if tokens.len() > self.context_length {
            return Err(Error::Contract(format!(
                "token sequence of length {} exceeds context length {}",
                tokens.len(),
                self.context_length
            )));
        }
        let unknown: Vec<String> = tokens
            .iter()
            .filter(|&&t| t as usize >= self.vocab_size)
            .map(|t| format!("id {t}"))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Vocabulary(unknown));
        }
        let eos = tokens
            .iter()
            .position(|&t| t == EOS)
            .ok_or_else(|| Error::Contract("token sequence has no end-of-text token".into()))?;
        Ok(&tokens[..=eos])
    }

    /// Returns the projected end-of-text state before normalization, `[1 × D]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Binder<'_, T>, tokens: &[u32]) -> Result<Var> {
        let ids: Vec<usize> = self.active_prefix(tokens)?.iter().map(|&t| t as usize).collect();
        let len = ids.len();
        let table = p.get(tape, self.token_embed);
        let x = tape.gather_rows(table, &ids)?;
        let pos = p.get(tape, self.positions);
        let pos = tape.slice_rows(pos, 0, len)?;
        let mut x = tape.add(x, pos)?;
        for block in &self.blocks {
            x = block.forward(tape, p, x, true)?.output;
        }
        let last = tape.slice_rows(x, len - 1, 1)?;
        let last = self.ln_final.forward(tape, p, last)?;
        let proj = p.get(tape, self.proj);
        Ok(tape.matmul(last, proj)?)
    }
}
