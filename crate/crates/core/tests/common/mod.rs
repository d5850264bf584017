//! Shared test helpers: central finite differences and small fixtures.
#![allow(dead_code)]

use medgrad_core::model::{ClipModel, ModelConfig};
use medgrad_core::numerics::{Rng, Scalar, Tape, Tensor, Var};
use medgrad_core::raster::Raster;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; 0 when both are (numerically) zero.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-10 {
        diff
    } else {
        diff / denom
    }
}

/// Fourth-order central difference of `f` at every coordinate of `x`, with
/// base step `h = 1e-3 · (1 + |x_i|)`:
/// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`.
///
/// The plain two-point stencil leaves O(h²) ≈ 1e-6 truncation error at this
/// step, which is the whole 64-bit budget; this one leaves O(h⁴).
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let xi = x[i];
        let h = 1e-3 * (1.0 + xi.abs());
        let mut at = |offset: f64| {
            work[i] = xi + offset;
            f(&work)
        };
        let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
        work[i] = xi;
        out.push((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h));
    }
    out
}

/// Scalar probe `Σ build(inputs) ⊙ R` on a fresh tape, with the inputs
/// tracked when `track` is set.
fn probe<T: Scalar>(
    tensors: &[Tensor<T>],
    weights: &[f64],
    track: bool,
    build: &impl Fn(&mut Tape<T>, &[Var]) -> medgrad_core::numerics::Result<Var>,
) -> (Tape<T>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = tensors
        .iter()
        .map(|t| {
            if track {
                tape.leaf(&t.clone().with_grad())
            } else {
                tape.leaf(t)
            }
        })
        .collect();
    let out = build(&mut tape, &vars).expect("forward");
    let shape = tape.shape(out).to_vec();
    let r = tape.constant(&shape, weights.iter().map(|&w| T::from_f64_lossy(w)).collect());
    let prod = tape.mul(out, r).expect("weights match output");
    let loss = tape.sum(prod).expect("sum");
    (tape, vars, loss)
}

/// Checks the tape gradient of a graph at precision `T` against central
/// differences of the same graph evaluated at 64-bit, at the identical
/// point, so oracle roundoff does not swamp the 32-bit comparison.
///
/// `build` and `build64` are the same graph at the two precisions. The
/// scalar checked is `Σ output ⊙ R` for fixed random `R`, so every output
/// element matters. Returns the largest relative error over the inputs.
pub fn check_op<T: Scalar>(
    inputs: &[Tensor<f64>],
    seed: u64,
    build: impl Fn(&mut Tape<T>, &[Var]) -> medgrad_core::numerics::Result<Var>,
    build64: impl Fn(&mut Tape<f64>, &[Var]) -> medgrad_core::numerics::Result<Var>,
) -> f64 {
    let cast: Vec<Tensor<T>> = inputs.iter().map(|t| t.cast::<T>()).collect();
    // The point actually evaluated at precision T, widened exactly.
    let point: Vec<Tensor<f64>> = cast.iter().map(|t| t.cast::<f64>()).collect();
    let out_len = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t)).collect();
        let out = build64(&mut tape, &vars).expect("forward");
        tape.value(out).len()
    };
    let mut rng = Rng::new(seed);
    // Rounded to T so both precisions probe with the same weights.
    let weights: Vec<f64> = (0..out_len)
        .map(|_| T::from_f64_lossy(rng.range(-1.0, 1.0)).as_f64())
        .collect();

    let (tape, vars, loss) = probe(&cast, &weights, true, &build);
    let grads = tape.backward(loss).expect("backward");
    let mut worst: f64 = 0.0;
    for (k, input) in point.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .get_or_zeros(vars[k], input.numel())
            .iter()
            .map(|g| g.as_f64())
            .collect();
        let numeric = central_diff(input.data(), |x| {
            let mut perturbed = point.clone();
            perturbed[k] = Tensor::new(input.shape().to_vec(), x.to_vec()).expect("same shape");
            let (t, _, l) = probe(&perturbed, &weights, false, &build64);
            t.value(l)[0]
        });
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Random tensor with entries in `[-1, 1]`, kept at least `margin` from 0.
pub fn random_tensor(rng: &mut Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.range(-1.0, 1.0);
            v.signum() * (margin + v.abs() * (1.0 - margin))
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_image(rng: &mut Rng, size: usize) -> Raster {
    let data = (0..size * size * 3).map(|_| rng.uniform() as f32).collect();
    Raster::new(size, size, data).unwrap()
}

/// Two-layer encoders with D = 8 on 16-pixel images.
pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        image_size: 16,
        patch_size: 8,
        vision_layers: 2,
        vision_heads: 2,
        vision_dim: 8,
        text_layers: 2,
        text_heads: 2,
        text_dim: 8,
        vocab_size,
        context_length: 8,
        embed_dim: 8,
        mlp_ratio: 2,
        ..ModelConfig::default()
    }
}

/// Random token sequence: BOS, 1–5 word ids, EOS, padding.
pub fn random_tokens(rng: &mut Rng, vocab_size: usize, context: usize) -> Vec<u32> {
    let n = 1 + rng.below(5.min(context - 2));
    let mut seq = vec![1u32];
    seq.extend((0..n).map(|_| 3 + rng.below(vocab_size - 3) as u32));
    seq.push(2);
    seq.resize(context, 0);
    seq
}

/// Full contrastive-loss gradient check over every model parameter, at a
/// random point near initialization.
///
/// The analytic gradient comes from the tape (`loss_and_grads`) at
/// precision `T`; the numeric one perturbs a 64-bit copy of the same
/// parameters and re-evaluates the eager loss (`batch_loss`). Returns the relative error of the concatenated gradient
/// and the worst per-tensor error.
pub fn check_contrastive_graph<T: Scalar>(seed: u64, batch: usize) -> (f64, f64) {
    let vocab = 12;
    let cfg = tiny_config(vocab);
    let mut rng = Rng::new(seed);
    let images: Vec<Raster> = (0..batch).map(|_| random_image(&mut rng, cfg.image_size)).collect();
    let texts: Vec<Vec<u32>> = (0..batch)
        .map(|_| random_tokens(&mut rng, vocab, cfg.context_length))
        .collect();
    let refs: Vec<&Raster> = images.iter().collect();
    let mut model = ClipModel::<T>::new(cfg, seed).unwrap();
    // Embedding tables start at std 0.02 and feed a layer norm directly, so
    // at init the loss curves on a scale close to the probe step. Checking at
    // a jittered point keeps the step small relative to every parameter.
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v = *v + T::from_f64_lossy(0.3 * rng.normal());
        }
    }

    let wide = model.cast::<f64>();
    let step = model.loss_and_grads(&refs, &texts).unwrap();
    let mut all_a = Vec::new();
    let mut all_n = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 0..model.params().len() {
        let analytic: Vec<f64> = step.grads[k].iter().map(|g| g.as_f64()).collect();
        let base = wide.params().tensors()[k].data().to_vec();
        let mut probe = wide.clone();
        let numeric = central_diff(&base, |x| {
            probe.params_mut().tensors_mut()[k].data_mut().copy_from_slice(x);
            probe.batch_loss(&refs, &texts).unwrap()
        });
        worst = worst.max(rel_err(&analytic, &numeric));
        all_a.extend(analytic);
        all_n.extend(numeric);
    }
    (rel_err(&all_a, &all_n), worst)
}

/// Both precisions of one op check: `(name, f32 error, f64 error)`.
pub type OpError = (&'static str, f64, f64);

macro_rules! both {
    ($out:ident, $name:expr, $inputs:expr, $seed:expr, $build:expr) => {{
        let inputs: Vec<Tensor<f64>> = $inputs;
        let e32 = check_op::<f32>(&inputs, $seed, $build, $build);
        let e64 = check_op::<f64>(&inputs, $seed, $build, $build);
        $out.push(($name, e32, e64));
    }};
}

/// Every differentiable tape op once, at shapes drawn from `seed` (each
/// dimension ≤ 8).
pub fn op_errors(seed: u64) -> Vec<OpError> {
    let mut rng = Rng::new(seed);
    let mut dim = |lo: usize| lo + rng.below(9 - lo);
    let (m, k, n) = (dim(1), dim(1), dim(3));
    let mut rng = Rng::derive(seed, 1);
    let mut t = |shape: &[usize], margin: f64| random_tensor(&mut rng, shape, margin);
    let mut out = Vec::new();

    both!(out, "matmul", vec![t(&[m, k], 0.0), t(&[k, n], 0.0)], seed, |g, v| g
        .matmul(v[0], v[1]));
    both!(out, "transpose", vec![t(&[m, n], 0.0)], seed, |g, v| g.transpose(v[0]));
    both!(out, "add", vec![t(&[m, n], 0.0), t(&[m, n], 0.0)], seed, |g, v| g
        .add(v[0], v[1]));
    both!(out, "sub", vec![t(&[m, n], 0.0), t(&[m, n], 0.0)], seed, |g, v| g
        .sub(v[0], v[1]));
    both!(out, "mul", vec![t(&[m, n], 0.0), t(&[m, n], 0.0)], seed, |g, v| g
        .mul(v[0], v[1]));
    both!(out, "add_bias", vec![t(&[m, n], 0.0), t(&[n], 0.0)], seed, |g, v| g
        .add_bias(v[0], v[1]));
    both!(out, "scale", vec![t(&[m, n], 0.0)], seed, |g, v| g
        .scale(v[0], Scalar::from_f64_lossy(1.3)));
    both!(out, "mul_scalar", vec![t(&[m, n], 0.0), t(&[1], 0.1)], seed, |g, v| g
        .mul_scalar(v[0], v[1]));
    both!(out, "exp", vec![t(&[m, n], 0.0)], seed, |g, v| g.exp(v[0]));
    both!(out, "gelu", vec![t(&[m, n], 0.0)], seed, |g, v| g.gelu(v[0]));
    both!(out, "relu", vec![t(&[m, n], 0.05)], seed, |g, v| g.relu(v[0]));
    let mut x = t(&[m, n], 0.0);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v += 0.5 * (i % n) as f64;
    }
    both!(out, "layer_norm", vec![x, t(&[n], 0.0), t(&[n], 0.0)], seed, |g, v| g
        .layer_norm(v[0], v[1], v[2], Scalar::from_f64_lossy(1e-5)));
    both!(out, "softmax", vec![t(&[m, n], 0.0)], seed, |g, v| g
        .softmax(v[0], false));
    both!(out, "softmax_causal", vec![t(&[n, n], 0.0)], seed, |g, v| g
        .softmax(v[0], true));
    both!(out, "l2_normalize", vec![t(&[m, n], 0.2)], seed, |g, v| g
        .l2_normalize(v[0]));
    both!(out, "cosine", vec![t(&[n], 0.2), t(&[n], 0.2)], seed, |g, v| g
        .cosine(v[0], v[1]));
    both!(out, "slice_rows", vec![t(&[m + 1, n], 0.0)], seed, |g, v| g
        .slice_rows(v[0], 1, m));
    both!(out, "slice_cols", vec![t(&[m, n], 0.0)], seed, |g, v| g.slice_cols(
        v[0],
        1,
        n - 1
    ));
    both!(
        out,
        "concat_rows",
        vec![t(&[m, n], 0.0), t(&[k, n], 0.0)],
        seed,
        |g, v| g.concat_rows(v[0], v[1])
    );
    both!(
        out,
        "concat_cols",
        vec![t(&[m, n], 0.0), t(&[m, k], 0.0)],
        seed,
        |g, v| g.concat_cols(&[v[0], v[1]])
    );
    let ids: Vec<usize> = (0..n + 2).map(|i| (i * 7 + seed as usize) % m).collect();
    both!(out, "gather_rows", vec![t(&[m, n], 0.0)], seed, |g, v| g
        .gather_rows(v[0], &ids));
    both!(out, "reshape", vec![t(&[m, n], 0.0)], seed, |g, v| g
        .reshape(v[0], &[n, m]));
    both!(out, "sum", vec![t(&[m, n], 0.0)], seed, |g, v| g.sum(v[0]));
    both!(out, "mean", vec![t(&[m, n], 0.0)], seed, |g, v| g.mean(v[0]));
    let targets: Vec<usize> = (0..m).map(|i| (i * 5 + 1) % n).collect();
    both!(out, "cross_entropy", vec![t(&[m, n], 0.0)], seed, |g, v| g
        .cross_entropy(v[0], &targets));
    out
}
