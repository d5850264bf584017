//! Finite-difference checks of every tape operation, in f32 and f64.

mod common;

use common::{check_op, random_tensor, rel_err};
use medgrad_core::numerics::{Rng, Scalar, Tape, Tensor};
use proptest::prelude::*;

const TOL_F32: f64 = 1e-3;
const TOL_F64: f64 = 1e-6;

/// Runs the same graph builder at both precisions.
macro_rules! check_both {
    ($inputs:expr, $seed:expr, $build:expr) => {{
        let inputs: Vec<Tensor<f64>> = $inputs;
        let e64 = check_op::<f64>(&inputs, $seed, $build, $build);
        let e32 = check_op::<f32>(&inputs, $seed, $build, $build);
        prop_assert!(e64 < TOL_F64, "f64 relative error {e64:e}");
        prop_assert!(e32 < TOL_F32, "f32 relative error {e32:e}");
    }};
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=6, 1usize..=6, 1usize..=6)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn matmul((m, k, n) in dims(), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        check_both!(
            vec![random_tensor(&mut rng, &[m, k], 0.0), random_tensor(&mut rng, &[k, n], 0.0)],
            seed,
            |t, v| t.matmul(v[0], v[1])
        );
    }

    #[test]
    fn transpose((m, n, _) in dims(), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        check_both!(vec![random_tensor(&mut rng, &[m, n], 0.0)], seed, |t, v| t.transpose(v[0]));
    }

    #[test]
    fn add_sub_mul((m, n, _) in dims(), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let pair = vec![random_tensor(&mut rng, &[m, n], 0.0), random_tensor(&mut rng, &[m, n], 0.0)];
        check_both!(pair.clone(), seed, |t, v| t.add(v[0], v[1]));
        check_both!(pair.clone(), seed, |t, v| t.sub(v[0], v[1]));
        check_both!(pair, seed, |t, v| t.mul(v[0], v[1]));
    }

    #[test]
    fn add_bias((m, n, _) in dims(), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        check_both!(
            vec![random_tensor(&mut rng, &[m, n], 0.0), random_tensor(&mut rng, &[n], 0.0)],
            seed,
            |t, v| t.add_bias(v[0], v[1])
        );
    }

    #[test]
    fn scale_and_mul_scalar((m, n, _) in dims(), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = random_tensor(&mut rng, &[m, n], 0.0);
        let s = random_tensor(&mut rng, &[1], 0.1);
        check_both!(vec![x.clone()], seed, |t, v| t.scale(v[0], Scalar::from_f64_lossy(-0.7)));
        check_both!(vec![x, s], seed, |t, v| t.mul_scalar(v[0], v[1]));
    }

    #[test]
    fn elementwise_nonlinearities((m, n, _) in dims(), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = random_tensor(&mut rng, &[m, n], 0.0);
        check_both!(vec![x.clone()], seed, |t, v| t.exp(v[0]));
        check_both!(vec![x], seed, |t, v| t.gelu(v[0]));
        // Kept away from the kink so the step never straddles it.
        let y = random_tensor(&mut rng, &[m, n], 0.05);
        check_both!(vec![y], seed, |t, v| t.relu(v[0]));
    }

    // With two columns the output is ±1 up to O(eps) and the x-gradient is
    // a cancellation residue that 32-bit arithmetic cannot resolve.
    #[test]
    fn layer_norm(m in 1usize..=5, n in 3usize..=8, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        // A per-column ramp keeps every row's variance well above eps; rows
        // of nearly equal values bend on a scale finer than the probe step.
        let mut x = random_tensor(&mut rng, &[m, n], 0.0);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v += 0.5 * (i % n) as f64;
        }
        check_both!(
            vec![
                x,
                random_tensor(&mut rng, &[n], 0.0),
                random_tensor(&mut rng, &[n], 0.0),
            ],
            seed,
            |t, v| t.layer_norm(v[0], v[1], v[2], Scalar::from_f64_lossy(1e-5))
        );
    }

    #[test]
    fn softmax(m in 1usize..=6, n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = random_tensor(&mut rng, &[m, n], 0.0);
        check_both!(vec![x.clone()], seed, |t, v| t.softmax(v[0], false));
        let sq = random_tensor(&mut rng, &[n, n], 0.0);
        check_both!(vec![sq], seed, |t, v| t.softmax(v[0], true));
    }

    #[test]
    fn l2_normalize_and_cosine((m, n, _) in dims(), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = random_tensor(&mut rng, &[m, n], 0.2);
        check_both!(vec![x], seed, |t, v| t.l2_normalize(v[0]));
        let a = random_tensor(&mut rng, &[n], 0.2);
        let b = random_tensor(&mut rng, &[n], 0.2);
        check_both!(vec![a, b], seed, |t, v| t.cosine(v[0], v[1]));
    }

    #[test]
    fn slicing_and_concatenation(m in 2usize..=6, n in 2usize..=6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = random_tensor(&mut rng, &[m, n], 0.0);
        let y = random_tensor(&mut rng, &[m + 1, n], 0.0);
        let z = random_tensor(&mut rng, &[m, n + 1], 0.0);
        check_both!(vec![x.clone()], seed, |t, v| t.slice_rows(v[0], 1, m - 1));
        check_both!(vec![x.clone()], seed, |t, v| t.slice_cols(v[0], 1, n - 1));
        check_both!(vec![x.clone(), y], seed, |t, v| t.concat_rows(v[0], v[1]));
        check_both!(vec![x, z], seed, |t, v| t.concat_cols(&[v[0], v[1], v[0]]));
    }

    #[test]
    fn gather_and_reshape(rows in 1usize..=5, n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let table = random_tensor(&mut rng, &[rows, n], 0.0);
        // Repeated ids exercise gradient accumulation.
        let ids: Vec<usize> = (0..rows + 2).map(|_| rng.below(rows)).collect();
        check_both!(vec![table.clone()], seed, |t, v| t.gather_rows(v[0], &ids));
        check_both!(vec![table], seed, |t, v| t.reshape(v[0], &[n, rows]));
    }

    #[test]
    fn reductions_and_cross_entropy(m in 1usize..=6, n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = random_tensor(&mut rng, &[m, n], 0.0);
        let targets: Vec<usize> = (0..m).map(|_| rng.below(n)).collect();
        check_both!(vec![x.clone()], seed, |t, v| t.sum(v[0]));
        check_both!(vec![x.clone()], seed, |t, v| t.mean(v[0]));
        check_both!(vec![x], seed, |t, v| t.cross_entropy(v[0], &targets));
    }
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(
        &Tensor::from_f64(&[2, 3], &[0.5, -1.0, 2.0, 3.0, 0.0, -4.0])
            .unwrap()
            .with_grad(),
    );
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0; 6]);
}

#[test]
fn cosine_of_identical_vectors_has_orthogonal_gradient() {
    let mut rng = Rng::new(9);
    for _ in 0..20 {
        let a = random_tensor(&mut rng, &[8], 0.1).cast::<f32>();
        let mut tape = Tape::<f32>::new();
        let va = tape.leaf(&a.clone().with_grad());
        let vb = tape.leaf(&a.clone().with_grad());
        let c = tape.cosine(va, vb).unwrap();
        assert!((tape.value(c)[0] - 1.0).abs() < 1e-6);
        let g = tape.backward(c).unwrap();
        let ga = g.get(va).unwrap();
        let dot: f32 = ga.iter().zip(a.data()).map(|(x, y)| x * y).sum();
        assert!(dot.abs() < 1e-5, "grad·a = {dot}");
    }
}

#[test]
fn relative_error_of_identical_vectors_is_zero() {
    assert_eq!(rel_err(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    assert_eq!(rel_err(&[0.0], &[0.0]), 0.0);
}

#[test]
fn full_contrastive_graph_matches_finite_differences() {
    let (global64, _) = common::check_contrastive_graph::<f64>(3, 3);
    assert!(global64 < TOL_F64, "f64 {global64:e}");
    let (global32, _) = common::check_contrastive_graph::<f32>(3, 3);
    assert!(global32 < TOL_F32, "f32 {global32:e}");
}

#[test]
fn every_op_passes_at_fixed_seeds() {
    for seed in 0..5 {
        for (name, e32, e64) in common::op_errors(seed) {
            assert!(
                e32 < TOL_F32 && e64 < TOL_F64,
                "{name} seed {seed}: f32 {e32:e}, f64 {e64:e}"
            );
        }
    }
}
