//! Adam with bias correction, applied in-place to [`Parameter`]s.

use super::{Parameter, TensorError};

/// Optimizer hyperparameters. Defaults: lr 1e-3, betas (0.9, 0.999), eps 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update over every parameter in the iterator. Each parameter must
/// carry a gradient (from a preceding backward pass); moments and the per-
/// parameter step count advance in place. Gradients are left untouched so the
/// caller decides when to clear them.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Parameter>,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    for p in params {
        // Detach the gradient buffer so values can be borrowed mutably.
        let grad = p
            .tensor
            .grad
            .take()
            .ok_or_else(|| TensorError::MissingGrad(p.name.clone()))?;
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let data = p.tensor.data_mut();
        for i in 0..grad.len() {
            let g = grad[i];
            p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
            p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = p.adam_m[i] / bc1;
            let v_hat = p.adam_v[i] / bc2;
            data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        p.tensor.grad = Some(grad);
    }
    Ok(())
}
