use rayon::prelude::*;

use crate::numerics::{self, kernels, Rng, Scalar, Tape, Tensor, Var};
use crate::raster::Raster;
use crate::{Error, Result};

use super::config::{ModelConfig, LOGIT_SCALE_MAX, LOGIT_SCALE_MIN};
use super::params::{add_into, Binder, ParamGrads, ParamId, ParamStore};
use super::text::TextEncoder;
use super::vision::{EncoderActivations, VisionEncoder, VisionTrace};

/// Dual encoder with a learned temperature. `exp(log_temperature)` is the
/// logit scale `1/τ`, kept inside `[1, 100]`.
#[derive(Debug, Clone)]
pub struct ClipModel<T: Scalar = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    pub vision: VisionEncoder,
    pub text: TextEncoder,
    pub log_temperature: ParamId,
}

/// Result of one batched forward/backward pass.
#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub loss: T,
    /// Dense gradients, one buffer per parameter in store order.
    pub grads: Vec<Vec<T>>,
    /// Unit-norm image embeddings of the batch, row per sample.
    pub image_embeddings: Vec<Vec<T>>,
}

impl<T: Scalar> ClipModel<T> {
    /// Seeded initialization. Parameter layout depends only on `config`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut params = ParamStore::default();
        let vision = VisionEncoder::new(&mut params, &config, &mut rng);
        let text = TextEncoder::new(&mut params, &config, &mut rng);
        let log_temperature = params.constant("log_temperature", &[1], config.logit_scale_init.ln());
        Ok(Self {
            config,
            params,
            vision,
            text,
            log_temperature,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Same model at another precision.
    pub fn cast<U: Scalar>(&self) -> ClipModel<U> {
        ClipModel {
            config: self.config.clone(),
            params: self.params.cast(),
            vision: self.vision.clone(),
            text: self.text.clone(),
            log_temperature: self.log_temperature,
        }
    }

    /// Overwrite every parameter from `(name, shape, data)` entries.
    pub fn load_tensors(&mut self, tensors: Vec<(String, Tensor<T>)>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::Format(format!(
                "tensor table has {} entries, model expects {}",
                tensors.len(),
                self.params.len()
            )));
        }
        for (name, t) in tensors {
            let id = self
                .params
                .find(&name)
                .ok_or_else(|| Error::Format(format!("unexpected tensor '{name}'")))?;
            let slot = &mut self.params.tensors_mut()[id.0];
            if slot.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn logit_scale(&self) -> T {
        self.params.get(self.log_temperature).data()[0].exp()
    }

    /// Clamp `exp(log_temperature)` into `[1, 100]`.
    pub fn clamp_temperature(&mut self) {
        let lo = T::from_f64_lossy(LOGIT_SCALE_MIN.ln());
        let hi = T::from_f64_lossy(LOGIT_SCALE_MAX.ln());
        let v = &mut self.params.tensors_mut()[self.log_temperature.0].data_mut()[0];
        *v = v.max(lo).min(hi);
    }

    fn check_image(&self, image: &Raster) -> Result<()> {
        let s = self.config.image_size;
        if image.height() != s || image.width() != s {
            return Err(numerics::NumericsError::Shape {
                op: "encode_image",
                lhs: vec![image.height(), image.width(), 3],
                rhs: vec![s, s, 3],
            }
            .into());
        }
        Ok(())
    }

    /// Records the image encoder on `tape`.
    pub fn trace_image(&self, tape: &mut Tape<T>, binder: &mut Binder<'_, T>, image: &Raster) -> Result<VisionTrace> {
        self.check_image(image)?;
        Ok(self.vision.forward(tape, binder, image)?)
    }

    pub fn trace_text(&self, tape: &mut Tape<T>, binder: &mut Binder<'_, T>, tokens: &[u32]) -> Result<Var> {
        self.text.forward(tape, binder, tokens)
    }

    /// Unit-norm image embedding plus final-block activations.
    pub fn encode_image(&self, image: &Raster) -> Result<(Tensor<T>, EncoderActivations<T>)> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params, false);
        let trace = self.trace_image(&mut tape, &mut binder, image)?;
        let emb = numerics::l2_normalize(&tape.tensor(trace.embedding).reshape(&[self.config.embed_dim])?)?;
        let acts = self.vision.activations(&tape, &self.params, &trace);
        Ok((emb, acts))
    }

    /// Unit-norm image embedding only.
    pub fn image_embedding(&self, image: &Raster) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params, false);
        let trace = self.trace_image(&mut tape, &mut binder, image)?;
        Ok(numerics::l2_normalize(
            &tape.tensor(trace.embedding).reshape(&[self.config.embed_dim])?,
        )?)
    }

    /// Unit-norm text embedding.
    pub fn encode_text(&self, tokens: &[u32]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params, false);
        let out = self.trace_text(&mut tape, &mut binder, tokens)?;
        Ok(numerics::l2_normalize(
            &tape.tensor(out).reshape(&[self.config.embed_dim])?,
        )?)
    }

    /// Text embeddings for many sequences, computed in parallel.
    pub fn encode_texts(&self, seqs: &[Vec<u32>]) -> Result<Vec<Tensor<T>>> {
        seqs.par_iter().map(|s| self.encode_text(s)).collect()
    }

    pub fn image_embeddings(&self, images: &[&Raster]) -> Result<Vec<Tensor<T>>> {
        images.par_iter().map(|im| self.image_embedding(im)).collect()
    }

    /// `logits[i][j] = exp(log_temperature) · cos(f_I(i), f_T(j))`.
    pub fn similarity_matrix(&self, images: &[&Raster], texts: &[Vec<u32>]) -> Result<Tensor<T>> {
        if images.len() != texts.len() {
            return Err(Error::Contract(format!(
                "{} images but {} texts",
                images.len(),
                texts.len()
            )));
        }
        let fi = self.image_embeddings(images)?;
        let ft = self.encode_texts(texts)?;
        self.scaled_cosines(&fi, &ft)
    }

    /// Scaled cosine matrix between unit-norm embedding lists.
    pub fn scaled_cosines(&self, images: &[Tensor<T>], texts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let scale = self.logit_scale();
        let mut data = Vec::with_capacity(images.len() * texts.len());
        for a in images {
            for b in texts {
                data.push(scale * numerics::cosine_similarity(a.data(), b.data())?);
            }
        }
        Ok(Tensor::new(vec![images.len(), texts.len()], data)?)
    }

    /// Class probabilities `softmax_k(cos(w_k, f_x)/τ)` over the prompts.
    pub fn classify(&self, image: &Raster, class_prompts: &[Vec<u32>]) -> Result<Vec<T>> {
        if class_prompts.is_empty() {
            return Err(Error::Contract("classify needs at least one class prompt".into()));
        }
        let fi = self.image_embedding(image)?;
        let prompts = self.encode_texts(class_prompts)?;
        self.classify_embedding(&fi, &prompts)
    }

    /// Probabilities for a precomputed unit-norm image embedding.
    pub fn classify_embedding(&self, image_embedding: &Tensor<T>, prompt_embeddings: &[Tensor<T>]) -> Result<Vec<T>> {
        let logits = self.scaled_cosines(std::slice::from_ref(image_embedding), prompt_embeddings)?;
        Ok(numerics::softmax(&logits)?.into_data())
    }

    /// Mean contrastive loss of a matched batch, evaluated eagerly.
    pub fn batch_loss(&self, images: &[&Raster], texts: &[Vec<u32>]) -> Result<T> {
        let logits = self.similarity_matrix(images, texts)?;
        contrastive_loss(&logits)
    }

    /// Loss and gradients for a matched batch.
    ///
    /// Each sample's encoders run on their own tape (in parallel); a small
    /// loss tape joins the embeddings. Per-sample gradients are summed in
    /// sample order, so the result does not depend on thread count.
    pub fn loss_and_grads(&self, images: &[&Raster], texts: &[Vec<u32>]) -> Result<StepOutput<T>> {
        let b = images.len();
        if b == 0 || texts.len() != b {
            return Err(Error::Contract(format!(
                "batch needs equal, non-zero image ({b}) and text ({}) counts",
                texts.len()
            )));
        }
        let d = self.config.embed_dim;

        struct Pass<'a, T: Scalar> {
            tape: Tape<T>,
            binder: Binder<'a, T>,
            out: Var,
        }

        let image_passes: Vec<Pass<'_, T>> = images
            .par_iter()
            .map(|img| {
                let mut tape = Tape::new();
                let mut binder = Binder::new(&self.params, true);
                let trace = self.trace_image(&mut tape, &mut binder, img)?;
                Ok(Pass {
                    tape,
                    binder,
                    out: trace.embedding,
                })
            })
            .collect::<Result<_>>()?;
        let text_passes: Vec<Pass<'_, T>> = texts
            .par_iter()
            .map(|tokens| {
                let mut tape = Tape::new();
                let mut binder = Binder::new(&self.params, true);
                let out = self.trace_text(&mut tape, &mut binder, tokens)?;
                Ok(Pass { tape, binder, out })
            })
            .collect::<Result<_>>()?;

        let stack = |passes: &[Pass<'_, T>]| -> Vec<T> {
            passes
                .iter()
                .flat_map(|p| p.tape.value(p.out).iter().copied())
                .collect()
        };
        let mut head = Tape::new();
        let img = head.leaf(&Tensor::new(vec![b, d], stack(&image_passes))?.with_grad());
        let txt = head.leaf(&Tensor::new(vec![b, d], stack(&text_passes))?.with_grad());
        let lt = head.leaf(self.params.get(self.log_temperature));
        let loss = contrastive_loss_on_tape(&mut head, img, txt, lt)?;
        let img_n = head.l2_normalize(img)?;
        let head_grads = head.backward(loss)?;

        let seed_for =
            |var: Var, i: usize| -> Vec<T> { head_grads.get_or_zeros(var, b * d)[i * d..(i + 1) * d].to_vec() };
        let backprop = |passes: &[Pass<'_, T>], var: Var| -> Result<Vec<ParamGrads<T>>> {
            passes
                .par_iter()
                .enumerate()
                .map(|(i, p)| {
                    let g = p.tape.backward_with_seed(p.out, &seed_for(var, i))?;
                    Ok(p.binder.collect(&g))
                })
                .collect()
        };
        let image_grads = backprop(&image_passes, img)?;
        let text_grads = backprop(&text_passes, txt)?;

        let mut grads = self.params.zero_grads();
        for part in image_grads.iter().chain(&text_grads) {
            add_into(&mut grads, part);
        }
        grads[self.log_temperature.0] = head_grads.get_or_zeros(lt, 1);

        let image_embeddings = head.value(img_n).chunks(d).map(<[T]>::to_vec).collect();
        Ok(StepOutput {
            loss: head.value(loss)[0],
            grads,
            image_embeddings,
        })
    }
}

/// Symmetric contrastive loss on a tape: mean of the row-wise (image→text)
/// and column-wise (text→image) cross-entropies with matched pairs on the
/// diagonal. Embeddings are normalized here.
pub fn contrastive_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    images: Var,
    texts: Var,
    log_temperature: Var,
) -> numerics::Result<Var> {
    let b = tape.shape(images)[0];
    let i_n = tape.l2_normalize(images)?;
    let t_n = tape.l2_normalize(texts)?;
    let t_t = tape.transpose(t_n)?;
    let cos = tape.matmul(i_n, t_t)?;
    let scale = tape.exp(log_temperature)?;
    let logits = tape.mul_scalar(cos, scale)?;
    logits_loss_on_tape(tape, logits, b)
}

fn logits_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, logits: Var, b: usize) -> numerics::Result<Var> {
    let targets: Vec<usize> = (0..b).collect();
    let rows = tape.cross_entropy(logits, &targets)?;
    let lt = tape.transpose(logits)?;
    let cols = tape.cross_entropy(lt, &targets)?;
    let total = tape.add(rows, cols)?;
    tape.scale(total, T::from_f64_lossy(0.5))
}

/// `(CE(rows, diag) + CE(columns, diag)) / 2` of a square logit matrix.
pub fn contrastive_loss<T: Scalar>(logits: &Tensor<T>) -> Result<T> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != shape[1] || shape[0] == 0 {
        return Err(Error::Contract(format!(
            "contrastive loss needs a non-empty square matrix, got {shape:?}"
        )));
    }
    let b = shape[0];
    let targets: Vec<usize> = (0..b).collect();
    let rows = numerics::cross_entropy(logits, &targets)?;
    let transposed = Tensor::new(vec![b, b], kernels::transpose(logits.data(), b, b))?;
    let cols = numerics::cross_entropy(&transposed, &targets)?;
    Ok((rows + cols) * T::from_f64_lossy(0.5))
}
