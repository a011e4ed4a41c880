//! Inverted dropout.

use rand::Rng;

use super::Mode;
use crate::{Error, Result};

/// Inverted dropout: train mode zeroes each element with probability `rate`
/// and scales survivors by `1/(1-rate)`, so infer mode is the identity.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Self { rate })
    }

    /// Applies dropout in place, returning the keep-scale mask used (empty
    /// when inactive: infer/calibrate mode or `rate == 0`). Backward
    /// multiplies by the same mask.
    pub fn forward(&self, x: &mut [f64], mode: Mode, rng: &mut impl Rng) -> Vec<f64> {
        if !mode.dropout_active() || self.rate == 0.0 {
            return Vec::new();
        }
        let scale = 1.0 / (1.0 - self.rate);
        let mut mask = vec![0.0; x.len()];
        for (v, m) in x.iter_mut().zip(mask.iter_mut()) {
            if rng.gen::<f64>() >= self.rate {
                *m = scale;
                *v *= scale;
            } else {
                *v = 0.0;
            }
        }
        mask
    }

    pub fn backward(d_out: &mut [f64], mask: &[f64]) {
        if mask.is_empty() {
            return;
        }
        for (d, &m) in d_out.iter_mut().zip(mask) {
            *d *= m;
        }
    }
}
