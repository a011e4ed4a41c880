//! Shared test support: a naive dense reference implementation of the conv
//! block. It materializes the embedding, computes every window position
//! (padded tail included) explicitly, and applies textbook batch norm over
//! batch x positions: no collapsed-padding shortcut. Used both as an
//! equality oracle for the fast path and to vet gradient-check cases for
//! ReLU/max-pool margins.

#![allow(dead_code)]

pub mod layer_checks;

use mailclass_core::nn::{ParamStore, BN_EPSILON, BN_MOMENTUM};

pub struct RefConvResult {
    /// Pooled `[B, k*f]` output.
    pub pooled: Vec<f64>,
    /// Post-update running moments per window (train mode only).
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
    /// Smallest max-pool winner margin over (example, filter): the gap
    /// between the best and second-best distinct candidate value, where the
    /// padded tail counts as one candidate.
    pub min_pool_gap: f64,
    /// Smallest |bn-output| at a pool winner (0 output counts the distance
    /// of the winning pre-ReLU value below zero).
    pub min_relu_margin: f64,
    /// Smallest batch-norm sigma.
    pub min_sigma: f64,
}

/// Reads a named parameter's data.
pub fn param(store: &ParamStore, name: &str) -> Vec<f64> {
    store
        .get(store.id_of(name).unwrap_or_else(|| panic!("missing param {name}")))
        .data()
        .to_vec()
}

/// Naive conv block forward. `prefix` addresses the block's parameters
/// (`{prefix}.w{w}.weight` etc.), `table_name` the embedding table.
#[allow(clippy::too_many_arguments)]
pub fn reference_conv_forward(
    store: &ParamStore,
    prefix: &str,
    table_name: &str,
    rows: &[Vec<u32>],
    windows: &[usize],
    filters: usize,
    embed_dim: usize,
    train: bool,
) -> RefConvResult {
    let table = param(store, table_name);
    let bsz = rows.len();
    let s = rows[0].len();
    let e = embed_dim;
    let f = filters;

    // Materialized embeddings, [B][s*e].
    let embedded: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| {
            let mut x = vec![0.0; s * e];
            for (i, &idx) in row.iter().enumerate() {
                x[i * e..(i + 1) * e]
                    .copy_from_slice(&table[idx as usize * e..(idx as usize + 1) * e]);
            }
            x
        })
        .collect();

    let mut pooled = vec![0.0; bsz * windows.len() * f];
    let mut running_mean = Vec::new();
    let mut running_var = Vec::new();
    let mut min_pool_gap = f64::INFINITY;
    let mut min_relu_margin = f64::INFINITY;
    let mut min_sigma = f64::INFINITY;

    for (wi, &w) in windows.iter().enumerate() {
        let weight = param(store, &format!("{prefix}.w{w}.weight"));
        let bias = param(store, &format!("{prefix}.w{w}.bias"));
        let gamma = param(store, &format!("{prefix}.w{w}.bn.gamma"));
        let beta = param(store, &format!("{prefix}.w{w}.bn.beta"));
        let rm = param(store, &format!("{prefix}.w{w}.bn.running_mean"));
        let rv = param(store, &format!("{prefix}.w{w}.bn.running_var"));
        let n_pos = s - w + 1;

        // Dense conv at every position.
        let mut z = vec![0.0; bsz * n_pos * f];
        for b in 0..bsz {
            for i in 0..n_pos {
                for fi in 0..f {
                    let mut acc = bias[fi];
                    for t in 0..w {
                        for d in 0..e {
                            acc += weight[fi * w * e + t * e + d] * embedded[b][(i + t) * e + d];
                        }
                    }
                    z[(b * n_pos + i) * f + fi] = acc;
                }
            }
        }

        // Batch statistics over batch x positions (or running stats).
        let (mean, sigma) = if train {
            let n = (bsz * n_pos) as f64;
            let mut mean = vec![0.0; f];
            for chunk in z.chunks_exact(f) {
                for (fi, &v) in chunk.iter().enumerate() {
                    mean[fi] += v;
                }
            }
            for m in &mut mean {
                *m /= n;
            }
            let mut var = vec![0.0; f];
            for chunk in z.chunks_exact(f) {
                for (fi, &v) in chunk.iter().enumerate() {
                    var[fi] += (v - mean[fi]) * (v - mean[fi]);
                }
            }
            for v in &mut var {
                *v /= n;
            }
            running_mean.push(
                rm.iter()
                    .zip(&mean)
                    .map(|(r, m)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * m)
                    .collect(),
            );
            running_var.push(
                rv.iter()
                    .zip(&var)
                    .map(|(r, v)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * v)
                    .collect(),
            );
            let sigma: Vec<f64> = var.iter().map(|v| (v + BN_EPSILON).sqrt()).collect();
            (mean, sigma)
        } else {
            let sigma: Vec<f64> = rv.iter().map(|v| (v + BN_EPSILON).sqrt()).collect();
            (rm, sigma)
        };
        for &sg in &sigma {
            min_sigma = min_sigma.min(sg);
        }

        // BN -> ReLU -> max over positions. All positions past the last real
        // token share one value per filter, so the candidate list is the
        // explicit positions plus (when a tail exists) one tail
        // representative; the max over candidates equals the max over all
        // positions.
        for b in 0..bsz {
            let real_len = rows[b].iter().rposition(|&t| t != 0).map_or(0, |p| p + 1);
            let explicit = real_len.min(n_pos);
            let n_candidates = explicit + usize::from(explicit < n_pos);
            for fi in 0..f {
                let mut best_a = f64::NEG_INFINITY;
                let mut best_u = 0.0;
                let mut second = f64::NEG_INFINITY;
                for c in 0..n_candidates {
                    let zv = z[(b * n_pos + c) * f + fi];
                    let u = gamma[fi] * (zv - mean[fi]) / sigma[fi] + beta[fi];
                    let a = u.max(0.0);
                    if a > best_a {
                        second = best_a;
                        best_a = a;
                        best_u = u;
                    } else if a > second {
                        second = a;
                    }
                }
                pooled[b * windows.len() * f + wi * f + fi] = best_a;
                if second > f64::NEG_INFINITY {
                    min_pool_gap = min_pool_gap.min(best_a - second);
                }
                min_relu_margin = min_relu_margin.min(best_u.abs());
            }
        }
    }

    RefConvResult {
        pooled,
        running_mean,
        running_var,
        min_pool_gap,
        min_relu_margin,
        min_sigma,
    }
}
