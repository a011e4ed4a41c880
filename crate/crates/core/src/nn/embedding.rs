//! Embedding look-up table.

use rand::Rng;

use super::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

/// Look-up table mapping token indices to dense rows of a `[V, e]` parameter.
///
/// Index 0 is the padding row. With `freeze_pad_row` (the default for all
/// model inputs) row 0 is initialized to zero and never receives gradient, so
/// padded positions contribute exactly nothing to convolutions and appending
/// extra padding cannot change a model's output.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
    pub freeze_pad_row: bool,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        dim: usize,
        freeze_pad_row: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let table = store.insert_glorot(name, vocab_size, dim, dim, dim, true, rng);
        if freeze_pad_row {
            store.get_mut(table).tensor.data_mut()[..dim].fill(0.0);
        }
        Self {
            table,
            vocab_size,
            dim,
            freeze_pad_row,
        }
    }

    /// Looks up each index; output row `i` equals table row `indices[i]`.
    pub fn forward(&self, store: &ParamStore, indices: &[u32]) -> Result<Tensor> {
        let table = store.get(self.table).tensor.data();
        let mut out = vec![0.0; indices.len() * self.dim];
        for (i, &idx) in indices.iter().enumerate() {
            let idx = idx as usize;
            if idx >= self.vocab_size {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    vocab_size: self.vocab_size,
                    position: i,
                });
            }
            out[i * self.dim..(i + 1) * self.dim]
                .copy_from_slice(&table[idx * self.dim..(idx + 1) * self.dim]);
        }
        Tensor::new(vec![indices.len(), self.dim], out)
    }

    /// Accumulates `d_out` into the gradient of the looked-up rows only.
    pub fn backward(&self, store: &mut ParamStore, indices: &[u32], d_out: &[f64]) {
        debug_assert_eq!(d_out.len(), indices.len() * self.dim);
        let param = store.get_mut(self.table);
        if !param.trainable {
            return;
        }
        let grad = param.tensor.grad_mut();
        for (i, &idx) in indices.iter().enumerate() {
            let idx = idx as usize;
            if self.freeze_pad_row && idx == 0 {
                continue;
            }
            let src = &d_out[i * self.dim..(i + 1) * self.dim];
            let dst = &mut grad[idx * self.dim..(idx + 1) * self.dim];
            for (g, d) in dst.iter_mut().zip(src) {
                *g += d;
            }
        }
    }
}
