use super::error::{shape_err, NumericsError, Result};
use super::scalar::Scalar;
use super::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_params(params: &[Tensor<T>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }
}

/// One bias-corrected Adam update with β₁=0.9, β₂=0.999, ε=1e-8.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(NumericsError::Contract(format!(
            "adam_step: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), (m, v)) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        if p.numel() != g.len() || p.numel() != m.len() || p.numel() != v.len() {
            return Err(shape_err("adam_step", p.shape(), &[g.len()]));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(BETA1);
    let b2 = T::from_f64_lossy(BETA2);
    let one = T::one();
    let bc1 = T::from_f64_lossy(1.0 - BETA1.powi(t));
    let bc2 = T::from_f64_lossy(1.0 - BETA2.powi(t));
    let lr = T::from_f64_lossy(lr);
    let eps = T::from_f64_lossy(EPSILON);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
        if !p.is_finite() {
            return Err(NumericsError::NonFinite { op: "adam_step" });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap()];
        let before = params.clone();
        let mut st = AdamState::for_params(&params);
        adam_step(&mut params, &[vec![0.0; 3]], &mut st, 1e-2).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_bounded_by_lr() {
        let mut params = vec![Tensor::<f64>::from_f64(&[2], &[0.0, 0.0]).unwrap()];
        let mut st = AdamState::for_params(&params);
        let lr = 1e-3;
        adam_step(&mut params, &[vec![3.0, -0.01]], &mut st, lr).unwrap();
        let d = params[0].data();
        assert!(d[0] < 0.0 && d[1] > 0.0);
        for &x in d {
            assert!(x.abs() <= lr * (1.0 + 1e-6));
        }
    }

    #[test]
    fn three_steps_on_square_match_reference() {
        // Scalar reference Adam on f(x) = x², f'(x) = 2x.
        let lr = 0.1;
        let (mut x, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
        let mut reference = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
            reference.push(x);
        }

        let mut params = vec![Tensor::<f64>::from_f64(&[1], &[1.5]).unwrap()];
        let mut st = AdamState::for_params(&params);
        for want in reference {
            let g = 2.0 * params[0].data()[0];
            adam_step(&mut params, &[vec![g]], &mut st, lr).unwrap();
            assert!((params[0].data()[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut params = vec![Tensor::<f32>::zeros(&[2])];
        let mut st = AdamState::for_params(&params);
        assert!(adam_step(&mut params, &[vec![0.0; 3]], &mut st, 1e-3).is_err());
    }
}
