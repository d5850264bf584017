//! Slice-level kernels shared by the eager tensor functions and the tape.
//!
//! Every reduction accumulates sequentially in row-major index order, so a
//! kernel returns the same bits no matter which thread calls it.

use super::scalar::Scalar;

/// `c[m×n] = a[m×k] · b[k×n]`.
///
/// Loop order is i-p-j, which keeps the accumulation for `c[i][j]` in
/// ascending `p` order (identical to the textbook triple loop).
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
    c
}

/// `c[m×k] = a[m×n] · b[k×n]ᵀ`.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            c[i * k + j] = acc;
        }
    }
    c
}

/// `c[k×n] = a[m×k]ᵀ · b[m×n]`.
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
    c
}

pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Row-wise softmax with max subtraction. With `causal`, entry `(r, c)` for
/// `c > r` is excluded (probability exactly zero).
pub fn softmax_rows<T: Scalar>(x: &[T], rows: usize, cols: usize, causal: bool) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let width = if causal { (r + 1).min(cols) } else { cols };
        let row = &x[r * cols..r * cols + width];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let orow = &mut out[r * cols..r * cols + width];
        let mut sum = T::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum = sum + *o;
        }
        for o in orow.iter_mut() {
            *o = *o / sum;
        }
    }
    out
}

/// Per-row log-sum-exp.
pub fn logsumexp_rows<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    (0..rows)
        .map(|r| {
            let row = &x[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for &v in row {
                sum = sum + (v - max).exp();
            }
            max + sum.ln()
        })
        .collect()
}

/// Layer normalization over the last axis. Returns `(y, mean, rstd)`.
pub fn layer_norm<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    rows: usize,
    cols: usize,
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::from_usize(cols).unwrap();
    let mut y = vec![T::zero(); rows * cols];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mut mean = T::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean / n;
        let mut var = T::zero();
        for &v in row {
            let d = v - mean;
            var = var + d * d;
        }
        var = var / n;
        let rstd = T::one() / (var + eps).sqrt();
        for c in 0..cols {
            y[r * cols + c] = (row[c] - mean) * rstd * gamma[c] + beta[c];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (y, means, rstds)
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let k = T::from_f64_lossy(GELU_K);
    let c = T::from_f64_lossy(GELU_C);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::from_f64_lossy(GELU_K);
    let c = T::from_f64_lossy(GELU_C);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let inner = k * (x + c * x * x * x);
    let t = inner.tanh();
    let dinner = k * (T::one() + three * c * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

/// Euclidean norm of each row.
pub fn row_norms<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    (0..rows)
        .map(|r| {
            let mut acc = T::zero();
            for &v in &x[r * cols..(r + 1) * cols] {
                acc = acc + v * v;
            }
            acc.sqrt()
        })
        .collect()
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}
