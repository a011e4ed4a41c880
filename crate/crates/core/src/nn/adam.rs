//! Adam optimizer with bias correction.

use super::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Applies one bias-corrected Adam update to every trainable parameter.
/// Non-trainable parameters are left bitwise unchanged. A trainable parameter
/// without an accumulated gradient is a hard error.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    for p in store.iter_mut() {
        if !p.trainable {
            continue;
        }
        let grad = p
            .tensor
            .grad()
            .ok_or_else(|| {
                Error::InvalidConfig(format!("missing gradient on trainable parameter `{}`", p.name))
            })?
            .to_vec();
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let data = p.tensor.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
            p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = p.adam_m[i] / bc1;
            let v_hat = p.adam_v[i] / bc2;
            data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar_store(value: f64, trainable: bool) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(vec![1], vec![value]).unwrap(), trainable);
        store
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut store = scalar_store(1.5, true);
        store.iter_mut().next().unwrap().tensor.grad_mut()[0] = 0.0;
        adam_step(&mut store, &AdamConfig::default()).unwrap();
        assert_eq!(store.iter().next().unwrap().data()[0], 1.5);
    }

    #[test]
    fn frozen_parameter_ignores_gradient() {
        let mut store = scalar_store(1.5, false);
        store.iter_mut().next().unwrap().tensor.grad_mut()[0] = 7.0;
        adam_step(&mut store, &AdamConfig::default()).unwrap();
        assert_eq!(store.iter().next().unwrap().data()[0].to_bits(), 1.5f64.to_bits());
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // Bias correction makes the first update lr * g/|g| up to epsilon.
        let mut store = scalar_store(1.0, true);
        store.iter_mut().next().unwrap().tensor.grad_mut()[0] = 1.0;
        adam_step(&mut store, &AdamConfig::default()).unwrap();
        let w = store.iter().next().unwrap().data()[0];
        assert!((w - 0.999).abs() < 1e-9, "w = {w}");
    }

    #[test]
    fn missing_gradient_on_trainable_parameter_is_an_error() {
        let mut store = scalar_store(1.0, true);
        assert!(adam_step(&mut store, &AdamConfig::default()).is_err());
    }
}
