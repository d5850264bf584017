//! Eager tensor functions (no gradient recording).

use super::error::{shape_err, NumericsError, Result};
use super::kernels;
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::NORM_EPS;

fn check_finite<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::NonFinite { op })
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(shape_err("matmul", sa, sb));
    }
    let out = kernels::matmul(a.data(), b.data(), sa[0], sa[1], sb[1]);
    let t = Tensor::new(vec![sa[0], sb[1]], out)?;
    check_finite("matmul", &t)?;
    Ok(t)
}

/// Normalizes each row (last axis) to unit norm.
pub fn l2_normalize<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = v.as_matrix_dims();
    let norms = kernels::row_norms(v.data(), rows, cols);
    let eps = T::from_f64_lossy(NORM_EPS);
    // Written negated so that NaN norms are rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if let Some(r) = norms.iter().position(|&n| !(n > eps)) {
        return Err(NumericsError::Degenerate {
            op: "l2_normalize",
            detail: format!("row {r} has norm {}", norms[r]),
        });
    }
    let data = v
        .data()
        .chunks(cols)
        .zip(&norms)
        .flat_map(|(row, &n)| row.iter().map(move |&x| x / n))
        .collect();
    Tensor::new(v.shape().to_vec(), data)
}

/// `a·b / (‖a‖‖b‖)`, clamped into `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(shape_err("cosine_similarity", &[a.len()], &[b.len()]));
    }
    let na = kernels::dot(a, a).sqrt();
    let nb = kernels::dot(b, b).sqrt();
    let eps = T::from_f64_lossy(NORM_EPS);
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(na > eps) || !(nb > eps) {
        return Err(NumericsError::Degenerate {
            op: "cosine_similarity",
            detail: "zero vector".into(),
        });
    }
    let c = kernels::dot(a, b) / (na * nb);
    if !c.is_finite() {
        return Err(NumericsError::NonFinite {
            op: "cosine_similarity",
        });
    }
    Ok(c.max(-T::one()).min(T::one()))
}

/// Softmax over the last axis, with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    check_finite("softmax", logits)?;
    let (rows, cols) = logits.as_matrix_dims();
    let data = kernels::softmax_rows(logits.data(), rows, cols, false);
    Tensor::new(logits.shape().to_vec(), data)
}

/// Mean over the batch of `-log softmax(logits[b])[targets[b]]`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<T> {
    check_finite("cross_entropy", logits)?;
    let (rows, cols) = logits.as_matrix_dims();
    if targets.len() != rows {
        return Err(shape_err("cross_entropy", logits.shape(), &[targets.len()]));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
        return Err(NumericsError::Index {
            op: "cross_entropy",
            index: bad,
            bound: cols,
        });
    }
    let lse = kernels::logsumexp_rows(logits.data(), rows, cols);
    let mut total = T::zero();
    for (r, &t) in targets.iter().enumerate() {
        total = total + (lse[r] - logits.data()[r * cols + t]);
    }
    Ok(total / T::from_usize(rows).unwrap())
}
