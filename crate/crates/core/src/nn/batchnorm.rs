//! Batch normalization over a `[B, C]` activation matrix.

use super::{Mode, ParamId, ParamStore, Tensor};
use crate::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-channel batch normalization.
///
/// Train mode normalizes with biased batch statistics and folds them into the
/// running moments with momentum [`BN_MOMENTUM`]; infer mode uses the frozen
/// running moments. Running moments live in the parameter store as
/// non-trainable parameters so they travel with checkpoints.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

/// Saved activations for the train-mode backward pass.
pub struct BatchNormCtx {
    xhat: Vec<f64>,
    sigma: Vec<f64>,
    batch: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        let gamma = store.insert(
            format!("{prefix}.gamma"),
            Tensor::new(vec![channels], vec![1.0; channels]).unwrap(),
            true,
        );
        let beta = store.insert(format!("{prefix}.beta"), Tensor::zeros(vec![channels]), true);
        let running_mean = store.insert(
            format!("{prefix}.running_mean"),
            Tensor::zeros(vec![channels]),
            false,
        );
        let running_var = store.insert(
            format!("{prefix}.running_var"),
            Tensor::new(vec![channels], vec![1.0; channels]).unwrap(),
            false,
        );
        Self {
            gamma,
            beta,
            running_mean,
            running_var,
            channels,
        }
    }

    /// Normalizes `x` (`[B, C]` row-major). Train mode returns a context for
    /// [`BatchNorm::backward`] and updates running moments.
    pub fn forward(
        &self,
        store: &mut ParamStore,
        x: &[f64],
        batch: usize,
        mode: Mode,
    ) -> Result<(Vec<f64>, Option<BatchNormCtx>)> {
        let c = self.channels;
        if x.len() != batch * c {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                detail: format!("expected {batch}x{c} inputs, got {}", x.len()),
            });
        }
        match mode.bn_momentum() {
            Some(momentum) => {
                if batch < 2 {
                    return Err(Error::InvalidConfig(
                        "batch_norm in train mode requires batch size >= 2".into(),
                    ));
                }
                let n = batch as f64;
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for b in 0..batch {
                    for (j, m) in mean.iter_mut().enumerate() {
                        *m += x[b * c + j];
                    }
                }
                for m in &mut mean {
                    *m /= n;
                }
                for b in 0..batch {
                    for (j, v) in var.iter_mut().enumerate() {
                        let d = x[b * c + j] - mean[j];
                        *v += d * d;
                    }
                }
                for v in &mut var {
                    *v /= n;
                }

                let sigma: Vec<f64> = var.iter().map(|v| (v + BN_EPSILON).sqrt()).collect();
                let gamma = store.get(self.gamma).data().to_vec();
                let beta = store.get(self.beta).data().to_vec();
                let mut xhat = vec![0.0; x.len()];
                let mut y = vec![0.0; x.len()];
                for b in 0..batch {
                    for j in 0..c {
                        let h = (x[b * c + j] - mean[j]) / sigma[j];
                        xhat[b * c + j] = h;
                        y[b * c + j] = gamma[j] * h + beta[j];
                    }
                }

                update_running(store.get_mut(self.running_mean).tensor.data_mut(), &mean, momentum);
                update_running(store.get_mut(self.running_var).tensor.data_mut(), &var, momentum);

                Ok((y, Some(BatchNormCtx { xhat, sigma, batch })))
            }
            None => {
                let mean = store.get(self.running_mean).data();
                let var = store.get(self.running_var).data();
                let gamma = store.get(self.gamma).data();
                let beta = store.get(self.beta).data();
                let mut y = vec![0.0; x.len()];
                for b in 0..batch {
                    for j in 0..c {
                        let sigma = (var[j] + BN_EPSILON).sqrt();
                        y[b * c + j] = gamma[j] * (x[b * c + j] - mean[j]) / sigma + beta[j];
                    }
                }
                Ok((y, None))
            }
        }
    }

    /// Train-mode backward, differentiating through the batch statistics.
    /// Returns `dL/dx` and accumulates gamma/beta gradients.
    pub fn backward(&self, store: &mut ParamStore, ctx: &BatchNormCtx, d_out: &[f64]) -> Vec<f64> {
        let c = self.channels;
        let batch = ctx.batch;
        let n = batch as f64;
        debug_assert_eq!(d_out.len(), batch * c);

        let mut s1 = vec![0.0; c]; // sum of d_out per channel
        let mut s2 = vec![0.0; c]; // sum of d_out * xhat per channel
        for b in 0..batch {
            for j in 0..c {
                s1[j] += d_out[b * c + j];
                s2[j] += d_out[b * c + j] * ctx.xhat[b * c + j];
            }
        }

        let gamma = store.get(self.gamma).data().to_vec();
        let mut dx = vec![0.0; batch * c];
        for b in 0..batch {
            for j in 0..c {
                let k = b * c + j;
                dx[k] = gamma[j] / ctx.sigma[j]
                    * (d_out[k] - s1[j] / n - ctx.xhat[k] * s2[j] / n);
            }
        }

        if store.get(self.gamma).trainable {
            let g = store.get_mut(self.gamma).tensor.grad_mut();
            for (gj, s) in g.iter_mut().zip(&s2) {
                *gj += s;
            }
        }
        if store.get(self.beta).trainable {
            let g = store.get_mut(self.beta).tensor.grad_mut();
            for (gj, s) in g.iter_mut().zip(&s1) {
                *gj += s;
            }
        }
        dx
    }
}

fn update_running(running: &mut [f64], batch_stat: &[f64], momentum: f64) {
    for (r, &s) in running.iter_mut().zip(batch_stat) {
        *r = momentum * *r + (1.0 - momentum) * s;
    }
}

/// Shared helpers for the conv block's position-weighted batch norm.
pub(crate) fn moments_from_sums(sum: f64, sumsq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    let var = (sumsq / n - mean * mean).max(0.0);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn fixture(channels: usize) -> (ParamStore, BatchNorm) {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", channels);
        (store, bn)
    }

    #[test]
    fn train_batch_of_one_is_a_hard_error() {
        let (mut store, bn) = fixture(3);
        let err = bn.forward(&mut store, &[1.0, 2.0, 3.0], 1, Mode::Train);
        assert!(err.is_err());
    }

    #[test]
    fn zero_variance_feature_stays_finite() {
        let (mut store, bn) = fixture(1);
        let x = vec![2.5; 8];
        let (y, _) = bn.forward(&mut store, &x, 8, Mode::Train).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn large_batch_is_normalized_to_unit_moments() {
        let (mut store, bn) = fixture(2);
        let mut rng = stream(5, "bn-test");
        let batch = 4096;
        let x: Vec<f64> = (0..batch * 2)
            .map(|_| 3.0 + 2.0 * rng.gen_range(-1.0..1.0f64))
            .collect();
        let (y, _) = bn.forward(&mut store, &x, batch, Mode::Train).unwrap();
        for j in 0..2 {
            let mean: f64 = (0..batch).map(|b| y[b * 2 + j]).sum::<f64>() / batch as f64;
            let var: f64 =
                (0..batch).map(|b| (y[b * 2 + j] - mean).powi(2)).sum::<f64>() / batch as f64;
            assert!(mean.abs() < 1e-3, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn infer_mode_is_bitwise_deterministic() {
        let (mut store, bn) = fixture(3);
        // Move running stats off their init values first.
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.37 - 1.0).collect();
        bn.forward(&mut store, &x, 4, Mode::Train).unwrap();
        let (a, _) = bn.forward(&mut store, &x, 4, Mode::Infer).unwrap();
        let (b, _) = bn.forward(&mut store, &x, 4, Mode::Infer).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn running_moments_move_toward_batch_stats() {
        let (mut store, bn) = fixture(1);
        let x = vec![10.0, 12.0, 8.0, 10.0];
        bn.forward(&mut store, &x, 4, Mode::Train).unwrap();
        let rm = store.get(bn.running_mean).data()[0];
        // 0.99 * 0 + 0.01 * 10
        assert!((rm - 0.1).abs() < 1e-12);
    }
}
