//! Fully connected layer with optional L1/L2 penalties.

use rand::Rng;

use super::{ParamId, ParamStore};
use crate::{par, Error, Result};

/// Affine map `y = x W^T + b` over a `[B, in]` batch, with L1/L2 penalty
/// parameters that contribute to the training loss but never alter the
/// forward output. Weight layout is row-major `[out, in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub l1: f64,
    pub l2: f64,
}

/// Saved input for the backward pass.
pub struct DenseCtx {
    x: Vec<f64>,
    batch: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        l1: f64,
        l2: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(l1 >= 0.0 && l2 >= 0.0, "penalty parameters must be >= 0");
        let weight =
            store.insert_glorot(format!("{prefix}.weight"), out_dim, in_dim, in_dim, out_dim, true, rng);
        let bias = store.insert(
            format!("{prefix}.bias"),
            super::Tensor::zeros(vec![out_dim]),
            true,
        );
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
            l1,
            l2,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], batch: usize) -> Result<(Vec<f64>, DenseCtx)> {
        if x.len() != batch * self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "dense_forward",
                detail: format!(
                    "input has {} values, expected {}x{}",
                    x.len(),
                    batch,
                    self.in_dim
                ),
            });
        }
        let w = store.get(self.weight).data();
        let b = store.get(self.bias).data();
        let (in_d, out_d) = (self.in_dim, self.out_dim);

        let mut y = vec![0.0; batch * out_d];
        par::chunks_mut_for_each(&mut y, out_d, |bi, row| {
            let xr = &x[bi * in_d..(bi + 1) * in_d];
            for (o, slot) in row.iter_mut().enumerate() {
                let wr = &w[o * in_d..(o + 1) * in_d];
                *slot = b[o] + crate::nn::conv_dot(wr, xr);
            }
        });
        Ok((
            y,
            DenseCtx {
                x: x.to_vec(),
                batch,
            },
        ))
    }

    /// Penalty term this layer adds to the training loss:
    /// `l1 * sum(|w|) + l2 * sum(w^2)` over the weight matrix.
    pub fn penalty(&self, store: &ParamStore) -> f64 {
        if self.l1 == 0.0 && self.l2 == 0.0 {
            return 0.0;
        }
        let w = store.get(self.weight).data();
        let abs: f64 = w.iter().map(|v| v.abs()).sum();
        let sq: f64 = w.iter().map(|v| v * v).sum();
        self.l1 * abs + self.l2 * sq
    }

    /// Accumulates weight/bias gradients (including the penalty gradient,
    /// once per call) and returns `dL/dx`.
    pub fn backward(&self, store: &mut ParamStore, ctx: &DenseCtx, d_out: &[f64]) -> Vec<f64> {
        let (in_d, out_d, batch) = (self.in_dim, self.out_dim, ctx.batch);
        debug_assert_eq!(d_out.len(), batch * out_d);

        let w = store.get(self.weight).data().to_vec();

        let mut dx = vec![0.0; batch * in_d];
        par::chunks_mut_for_each(&mut dx, in_d, |bi, row| {
            for o in 0..out_d {
                let g = d_out[bi * out_d + o];
                if g == 0.0 {
                    continue;
                }
                let wr = &w[o * in_d..(o + 1) * in_d];
                for (slot, wv) in row.iter_mut().zip(wr) {
                    *slot += wv * g;
                }
            }
        });

        if store.get(self.weight).trainable {
            let (l1, l2) = (self.l1, self.l2);
            let x = &ctx.x;
            let mut dw = vec![0.0; out_d * in_d];
            par::chunks_mut_for_each(&mut dw, in_d, |o, row| {
                for bi in 0..batch {
                    let g = d_out[bi * out_d + o];
                    if g == 0.0 {
                        continue;
                    }
                    let xr = &x[bi * in_d..(bi + 1) * in_d];
                    for (slot, xv) in row.iter_mut().zip(xr) {
                        *slot += xv * g;
                    }
                }
            });
            let grad = store.get_mut(self.weight).tensor.grad_mut();
            for (i, (g, d)) in grad.iter_mut().zip(&dw).enumerate() {
                let wv = w[i];
                *g += d + l1 * wv.signum() * f64::from(wv != 0.0) + 2.0 * l2 * wv;
            }
        }
        if store.get(self.bias).trainable {
            let grad = store.get_mut(self.bias).tensor.grad_mut();
            for (o, g) in grad.iter_mut().enumerate() {
                let mut acc = 0.0;
                for bi in 0..batch {
                    acc += d_out[bi * out_d + o];
                }
                *g += acc;
            }
        }
        dx
    }
}

#[inline]
pub(crate) fn relu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::rng::stream;

    #[test]
    fn identity_weight_and_zero_bias_pass_input_through() {
        let mut store = ParamStore::new();
        let n = 3;
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        let weight = store.insert("w", Tensor::new(vec![n, n], w).unwrap(), true);
        let bias = store.insert("b", Tensor::zeros(vec![n]), true);
        let dense = Dense {
            weight,
            bias,
            in_dim: n,
            out_dim: n,
            l1: 0.0,
            l2: 0.0,
        };
        let x = vec![0.5, -1.25, 2.0, 0.0, 3.5, -0.5];
        let (y, _) = dense.forward(&store, &x, 2).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn shape_mismatch_is_a_hard_error() {
        let mut store = ParamStore::new();
        let mut rng = stream(1, "init");
        let dense = Dense::new(&mut store, "fc", 4, 2, 0.0, 0.0, &mut rng);
        assert!(dense.forward(&store, &[1.0; 7], 2).is_err());
    }

    #[test]
    fn penalties_affect_loss_term_but_not_forward() {
        let mut store = ParamStore::new();
        let mut rng = stream(2, "init");
        let plain = Dense::new(&mut store, "a", 3, 2, 0.0, 0.0, &mut rng);
        let mut rng = stream(2, "init");
        let penalized = Dense::new(&mut store, "b", 3, 2, 1e-4, 1e-4, &mut rng);

        let x = vec![0.3, -0.9, 1.1];
        let (ya, _) = plain.forward(&store, &x, 1).unwrap();
        let (yb, _) = penalized.forward(&store, &x, 1).unwrap();
        assert_eq!(ya, yb);
        assert_eq!(plain.penalty(&store), 0.0);
        assert!(penalized.penalty(&store) > 0.0);
    }

    #[test]
    fn l2_penalty_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = stream(9, "init");
        let dense = Dense::new(&mut store, "fc", 3, 2, 0.0, 1e-2, &mut rng);
        let x = vec![0.4, -0.2, 0.8];

        // Loss = sum(forward) + penalty; analytic grad via backward with ones.
        let (_, ctx) = dense.forward(&store, &x, 1).unwrap();
        dense.backward(&mut store, &ctx, &[1.0, 1.0]);
        let analytic = store.get(dense.weight).tensor.grad().unwrap().to_vec();

        let h = 1e-4;
        for i in 0..6 {
            let eval = |store: &ParamStore| -> f64 {
                let (y, _) = dense.forward(store, &x, 1).unwrap();
                y.iter().sum::<f64>() + dense.penalty(store)
            };
            let orig = store.get(dense.weight).data()[i];
            store.get_mut(dense.weight).tensor.data_mut()[i] = orig + h;
            let plus = eval(&store);
            store.get_mut(dense.weight).tensor.data_mut()[i] = orig - h;
            let minus = eval(&store);
            store.get_mut(dense.weight).tensor.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1e-8);
            assert!(rel < 1e-4, "element {i}: analytic {} numeric {}", analytic[i], numeric);
        }
    }
}
