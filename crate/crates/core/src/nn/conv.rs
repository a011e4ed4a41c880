//! Temporal convolution block: conv → batch norm → ReLU → max-pool-over-time.
//!
//! The block runs one convolution per sliding-window size over an embedded
//! token sequence (stride 1), batch-normalizes each window's filter channels,
//! applies ReLU, takes the per-filter maximum across positions, and
//! concatenates the window outputs into a vector of length
//! `window_sizes.len() * filters_per_window`.
//!
//! Sequences arrive right-padded with index 0 to a fixed length `s`. Every
//! window position past the last real token sees an identical all-padding
//! input, so its conv output is one shared value per filter. The block
//! exploits that: it computes positions overlapping real tokens explicitly
//! and folds the padded tail in by multiplicity through the batch-norm
//! statistics, the max-pool, and the backward pass. This is an exact
//! reformulation, not an approximation (the dense reference in the tests
//! checks it), and it makes cost proportional to real sequence length rather
//! than padded length.

use rand::Rng;

use super::batchnorm::moments_from_sums;
use super::dense::relu_scalar;
use super::{BatchNorm, Embedding, Mode, ParamId, ParamStore, BN_EPSILON};
use crate::{par, Error, Result};

/// Sliding-window sizes and filter count of one conv block. Stride is 1.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvBlockSpec {
    pub window_sizes: Vec<usize>,
    pub filters_per_window: usize,
}

impl ConvBlockSpec {
    pub fn new(max_window: usize, filters_per_window: usize) -> Self {
        Self {
            window_sizes: (1..=max_window).collect(),
            filters_per_window,
        }
    }

    /// Output feature length after max-pool-over-time: `k * f`.
    pub fn out_width(&self) -> usize {
        self.window_sizes.len() * self.filters_per_window
    }

    pub fn max_window(&self) -> usize {
        self.window_sizes.iter().copied().max().unwrap_or(0)
    }
}

/// A batch of fixed-length, right-padded index sequences.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    seq_len: usize,
    flat: Vec<u32>,
    real_len: Vec<usize>,
}

impl EncodedBatch {
    /// Builds a batch from equal-length rows. `real_len` per row is the count
    /// of tokens up to and including the last non-padding index.
    pub fn new(rows: &[Vec<u32>]) -> Result<Self> {
        Self::from_rows(rows.iter().map(|r| r.as_slice()))
    }

    /// Like [`EncodedBatch::new`], borrowing the rows.
    pub fn from_rows<'a>(rows: impl Iterator<Item = &'a [u32]>) -> Result<Self> {
        let mut seq_len = 0;
        let mut flat = Vec::new();
        let mut real_len = Vec::new();
        for (i, row) in rows.enumerate() {
            if i == 0 {
                seq_len = row.len();
            } else if row.len() != seq_len {
                return Err(Error::ShapeMismatch {
                    op: "EncodedBatch::from_rows",
                    detail: format!("row {i} has length {}, expected {seq_len}", row.len()),
                });
            }
            real_len.push(row.iter().rposition(|&t| t != 0).map_or(0, |p| p + 1));
            flat.extend_from_slice(row);
        }
        Ok(Self {
            seq_len,
            flat,
            real_len,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.real_len.len()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn row(&self, b: usize) -> &[u32] {
        &self.flat[b * self.seq_len..(b + 1) * self.seq_len]
    }

    pub fn real_len(&self, b: usize) -> usize {
        self.real_len[b]
    }
}

/// Argmax sentinel marking the shared padded-tail position.
const PAD_ARGMAX: u32 = u32::MAX;

/// Four-lane dot product. Plain multiply-add keeps the reduction fast on
/// baseline x86-64 (no fma libcall) while the lane order stays fixed, so
/// results are bit-stable run to run.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Per-window saved state for the backward pass.
struct WindowCtx {
    /// Explicit pre-batch-norm conv outputs, `[E_b * f]` per example.
    z: Vec<Vec<f64>>,
    /// Shared conv output of an all-padding window, per filter.
    z_pad: Vec<f64>,
    /// Batch-norm batch statistics per filter.
    mean: Vec<f64>,
    sigma: Vec<f64>,
    /// Winning position per `(example, filter)`; `PAD_ARGMAX` for the tail.
    argmax: Vec<u32>,
}

/// Saved activations of one train-mode forward call.
pub struct ConvBlockCtx {
    windows: Vec<WindowCtx>,
}

/// Temporal conv block with a fused embedding lookup.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub spec: ConvBlockSpec,
    pub embed: Embedding,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
    bns: Vec<BatchNorm>,
}

impl ConvBlock {
    /// Builds conv weights, biases, and per-window batch-norm parameters
    /// under `prefix`, convolving rows of `embed`'s table.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        embed: Embedding,
        spec: ConvBlockSpec,
        rng: &mut impl Rng,
    ) -> Self {
        let f = spec.filters_per_window;
        let e = embed.dim;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut bns = Vec::new();
        for &w in &spec.window_sizes {
            let fan_in = w * e;
            weights.push(store.insert_glorot(
                format!("{prefix}.w{w}.weight"),
                f,
                fan_in,
                fan_in,
                f,
                true,
                rng,
            ));
            biases.push(store.insert(
                format!("{prefix}.w{w}.bias"),
                super::Tensor::zeros(vec![f]),
                true,
            ));
            bns.push(BatchNorm::new(store, &format!("{prefix}.w{w}.bn"), f));
        }
        Self {
            spec,
            embed,
            weights,
            biases,
            bns,
        }
    }

    fn check_seq_len(&self, s: usize) -> Result<()> {
        let max_w = self.spec.max_window();
        if s < max_w {
            return Err(Error::ShapeMismatch {
                op: "temporal_conv",
                detail: format!("sequence length {s} is shorter than max window size {max_w}"),
            });
        }
        Ok(())
    }

    fn check_indices(&self, batch: &EncodedBatch) -> Result<()> {
        for b in 0..batch.batch_size() {
            for (pos, &idx) in batch.row(b).iter().enumerate() {
                if idx as usize >= self.embed.vocab_size {
                    return Err(Error::IndexOutOfRange {
                        index: idx as usize,
                        vocab_size: self.embed.vocab_size,
                        position: pos,
                    });
                }
            }
        }
        Ok(())
    }

    /// Explicit conv outputs for one example and window size: `[E_b * f]`,
    /// filter index fastest.
    fn conv_example(
        &self,
        table: &[f64],
        weight: &[f64],
        bias: &[f64],
        seq: &[u32],
        explicit: usize,
        w: usize,
    ) -> Vec<f64> {
        let e = self.embed.dim;
        let f = self.spec.filters_per_window;
        let mut z = vec![0.0; explicit * f];
        let mut window = vec![0.0; w * e];
        for i in 0..explicit {
            for t in 0..w {
                let idx = seq[i + t] as usize;
                window[t * e..(t + 1) * e].copy_from_slice(&table[idx * e..(idx + 1) * e]);
            }
            let out = &mut z[i * f..(i + 1) * f];
            for (fi, slot) in out.iter_mut().enumerate() {
                let wr = &weight[fi * w * e..(fi + 1) * w * e];
                *slot = bias[fi] + dot(wr, &window);
            }
        }
        z
    }

    /// Conv output of an all-padding window (shared by every tail position).
    fn pad_value(&self, table: &[f64], weight: &[f64], bias: &[f64], w: usize) -> Vec<f64> {
        let e = self.embed.dim;
        let row0 = &table[..e];
        let mut z = bias.to_vec();
        if row0.iter().any(|&v| v != 0.0) {
            for (fi, slot) in z.iter_mut().enumerate() {
                let wr = &weight[fi * w * e..(fi + 1) * w * e];
                let mut acc = 0.0;
                for t in 0..w {
                    acc += dot(&wr[t * e..(t + 1) * e], row0);
                }
                *slot += acc;
            }
        }
        z
    }

    /// Batch-statistics forward (train or calibrate mode). Returns the pooled
    /// `[B, k*f]` features and the context for [`ConvBlock::backward`];
    /// updates batch-norm running moments at the mode's momentum.
    pub fn forward_train(
        &self,
        store: &mut ParamStore,
        batch: &EncodedBatch,
        mode: Mode,
    ) -> Result<(Vec<f64>, ConvBlockCtx)> {
        let momentum = mode.bn_momentum().ok_or_else(|| {
            Error::InvalidConfig("forward_train called in infer mode".into())
        })?;
        self.check_seq_len(batch.seq_len())?;
        self.check_indices(batch)?;
        if batch.batch_size() < 2 {
            return Err(Error::InvalidConfig(
                "batch_norm in train mode requires batch size >= 2".into(),
            ));
        }
        let bsz = batch.batch_size();
        let f = self.spec.filters_per_window;
        let width = self.spec.out_width();
        let mut out = vec![0.0; bsz * width];
        let mut windows = Vec::with_capacity(self.spec.window_sizes.len());

        for (wi, &w) in self.spec.window_sizes.iter().enumerate() {
            let n_pos = batch.seq_len() - w + 1;
            let table = store.get(self.embed.table).data();
            let weight = store.get(self.weights[wi]).data();
            let bias = store.get(self.biases[wi]).data();

            let z: Vec<Vec<f64>> = par::map_collect_indexed(bsz, |b| {
                let explicit = batch.real_len(b).min(n_pos);
                self.conv_example(table, weight, bias, batch.row(b), explicit, w)
            });
            let z_pad = self.pad_value(table, weight, bias, w);

            // Batch statistics over batch x positions, padded tail folded in
            // by multiplicity. Accumulation order is fixed (b, then position).
            let n_total = (bsz * n_pos) as f64;
            let mut sum = vec![0.0; f];
            let mut sumsq = vec![0.0; f];
            for (b, zb) in z.iter().enumerate() {
                for chunk in zb.chunks_exact(f) {
                    for (fi, &v) in chunk.iter().enumerate() {
                        sum[fi] += v;
                        sumsq[fi] += v * v;
                    }
                }
                let pads = (n_pos - batch.real_len(b).min(n_pos)) as f64;
                for fi in 0..f {
                    sum[fi] += pads * z_pad[fi];
                    sumsq[fi] += pads * z_pad[fi] * z_pad[fi];
                }
            }
            let mut mean = vec![0.0; f];
            let mut var = vec![0.0; f];
            let mut sigma = vec![0.0; f];
            for fi in 0..f {
                let (m, v) = moments_from_sums(sum[fi], sumsq[fi], n_total);
                mean[fi] = m;
                var[fi] = v;
                sigma[fi] = (v + BN_EPSILON).sqrt();
            }

            let bn = &self.bns[wi];
            {
                let rm = store.get_mut(bn.running_mean).tensor.data_mut();
                for (r, &m) in rm.iter_mut().zip(&mean) {
                    *r = momentum * *r + (1.0 - momentum) * m;
                }
            }
            {
                let rv = store.get_mut(bn.running_var).tensor.data_mut();
                for (r, &v) in rv.iter_mut().zip(&var) {
                    *r = momentum * *r + (1.0 - momentum) * v;
                }
            }

            let gamma = store.get(bn.gamma).data();
            let beta = store.get(bn.beta).data();
            let argmax = pool_window(
                &z, &z_pad, &mean, &sigma, gamma, beta, batch, n_pos, f, &mut out, width, wi * f,
            );

            windows.push(WindowCtx {
                z,
                z_pad,
                mean,
                sigma,
                argmax,
            });
        }
        Ok((out, ConvBlockCtx { windows }))
    }

    /// Infer-mode forward using frozen running moments. Read-only and safe to
    /// call concurrently.
    pub fn forward_infer(&self, store: &ParamStore, batch: &EncodedBatch) -> Result<Vec<f64>> {
        self.check_seq_len(batch.seq_len())?;
        self.check_indices(batch)?;
        let bsz = batch.batch_size();
        let f = self.spec.filters_per_window;
        let width = self.spec.out_width();
        let mut out = vec![0.0; bsz * width];

        for (wi, &w) in self.spec.window_sizes.iter().enumerate() {
            let n_pos = batch.seq_len() - w + 1;
            let table = store.get(self.embed.table).data();
            let weight = store.get(self.weights[wi]).data();
            let bias = store.get(self.biases[wi]).data();
            let bn = &self.bns[wi];
            let mean = store.get(bn.running_mean).data();
            let var = store.get(bn.running_var).data();
            let gamma = store.get(bn.gamma).data();
            let beta = store.get(bn.beta).data();
            let sigma: Vec<f64> = var.iter().map(|v| (v + BN_EPSILON).sqrt()).collect();

            let z: Vec<Vec<f64>> = par::map_collect_indexed(bsz, |b| {
                let explicit = batch.real_len(b).min(n_pos);
                self.conv_example(table, weight, bias, batch.row(b), explicit, w)
            });
            let z_pad = self.pad_value(table, weight, bias, w);
            pool_window(
                &z, &z_pad, mean, &sigma, gamma, beta, batch, n_pos, f, &mut out, width, wi * f,
            );
        }
        Ok(out)
    }

    /// Backward through pool, ReLU, batch-norm (including its batch
    /// statistics) and the convolution. Accumulates gradients for conv
    /// weights/biases, batch-norm gamma/beta, and the embedding table.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        batch: &EncodedBatch,
        ctx: &ConvBlockCtx,
        d_out: &[f64],
    ) {
        let bsz = batch.batch_size();
        let f = self.spec.filters_per_window;
        let width = self.spec.out_width();
        let e = self.embed.dim;
        debug_assert_eq!(d_out.len(), bsz * width);

        for (wi, &w) in self.spec.window_sizes.iter().enumerate() {
            let n_pos = batch.seq_len() - w + 1;
            let wc = &ctx.windows[wi];
            let bn = &self.bns[wi];
            let gamma = store.get(bn.gamma).data().to_vec();
            let beta = store.get(bn.beta).data().to_vec();
            let n_total = (bsz * n_pos) as f64;

            // Upstream gradient reaches one position per (example, filter):
            // the pool winner, gated by ReLU.
            let mut du = vec![0.0; bsz * f]; // d loss / d bn-output at the winner
            let mut s1 = vec![0.0; f]; // sum du
            let mut s2 = vec![0.0; f]; // sum du * xhat
            let mut pad_du = vec![0.0; f]; // du mass landing on tail winners
            for b in 0..bsz {
                for fi in 0..f {
                    let g = d_out[b * width + wi * f + fi];
                    if g == 0.0 {
                        continue;
                    }
                    let am = wc.argmax[b * f + fi];
                    let zv = if am == PAD_ARGMAX {
                        wc.z_pad[fi]
                    } else {
                        wc.z[b][am as usize * f + fi]
                    };
                    let xhat = (zv - wc.mean[fi]) / wc.sigma[fi];
                    let u = gamma[fi] * xhat + beta[fi];
                    if u <= 0.0 {
                        continue; // ReLU gate closed
                    }
                    du[b * f + fi] = g;
                    s1[fi] += g;
                    s2[fi] += g * xhat;
                    if am == PAD_ARGMAX {
                        pad_du[fi] += g;
                    }
                }
            }

            if store.get(bn.gamma).trainable {
                let grad = store.get_mut(bn.gamma).tensor.grad_mut();
                for (gj, s) in grad.iter_mut().zip(&s2) {
                    *gj += s;
                }
            }
            if store.get(bn.beta).trainable {
                let grad = store.get_mut(bn.beta).tensor.grad_mut();
                for (gj, s) in grad.iter_mut().zip(&s1) {
                    *gj += s;
                }
            }

            // dz at every position: (gamma/sigma) * (du - S1/N - xhat*S2/N),
            // with du nonzero only at winners. Explicit positions are
            // materialized; the padded tail is handled by multiplicity.
            let dz: Vec<Vec<f64>> = par::map_collect_indexed(bsz, |b| {
                let zb = &wc.z[b];
                let mut dzb = vec![0.0; zb.len()];
                for (i, chunk) in zb.chunks_exact(f).enumerate() {
                    for fi in 0..f {
                        let xhat = (chunk[fi] - wc.mean[fi]) / wc.sigma[fi];
                        let du_here = if wc.argmax[b * f + fi] == i as u32 {
                            du[b * f + fi]
                        } else {
                            0.0
                        };
                        dzb[i * f + fi] = gamma[fi] / wc.sigma[fi]
                            * (du_here - s1[fi] / n_total - xhat * s2[fi] / n_total);
                    }
                }
                dzb
            });

            // Gradient mass of all padded-tail positions, per filter.
            let mut pad_mass = vec![0.0; f];
            let total_pads: usize = (0..bsz)
                .map(|b| n_pos - batch.real_len(b).min(n_pos))
                .sum();
            for fi in 0..f {
                let xhat_pad = (wc.z_pad[fi] - wc.mean[fi]) / wc.sigma[fi];
                let common = gamma[fi] / wc.sigma[fi]
                    * (-s1[fi] / n_total - xhat_pad * s2[fi] / n_total);
                pad_mass[fi] =
                    total_pads as f64 * common + gamma[fi] / wc.sigma[fi] * pad_du[fi];
            }

            // Conv bias gradient: every position contributes its dz.
            if store.get(self.biases[wi]).trainable {
                let mut db = pad_mass.clone();
                for dzb in &dz {
                    for chunk in dzb.chunks_exact(f) {
                        for (fi, &v) in chunk.iter().enumerate() {
                            db[fi] += v;
                        }
                    }
                }
                let grad = store.get_mut(self.biases[wi]).tensor.grad_mut();
                for (gj, d) in grad.iter_mut().zip(&db) {
                    *gj += d;
                }
            }

            // Conv weight gradient, one filter row per task.
            let table = store.get(self.embed.table).data().to_vec();
            let row0 = &table[..e];
            let pad_row_nonzero = row0.iter().any(|&v| v != 0.0);
            if store.get(self.weights[wi]).trainable {
                let mut dw = vec![0.0; f * w * e];
                par::chunks_mut_for_each(&mut dw, w * e, |fi, row| {
                    for b in 0..bsz {
                        let seq = batch.row(b);
                        let dzb = &dz[b];
                        for i in 0..dzb.len() / f {
                            let g = dzb[i * f + fi];
                            if g == 0.0 {
                                continue;
                            }
                            for t in 0..w {
                                let idx = seq[i + t] as usize;
                                let emb = &table[idx * e..(idx + 1) * e];
                                let dst = &mut row[t * e..(t + 1) * e];
                                for (slot, &x) in dst.iter_mut().zip(emb) {
                                    *slot += x * g;
                                }
                            }
                        }
                    }
                    if pad_row_nonzero && pad_mass[fi] != 0.0 {
                        for t in 0..w {
                            let dst = &mut row[t * e..(t + 1) * e];
                            for (slot, &x) in dst.iter_mut().zip(row0) {
                                *slot += x * pad_mass[fi];
                            }
                        }
                    }
                });
                let grad = store.get_mut(self.weights[wi]).tensor.grad_mut();
                for (gj, d) in grad.iter_mut().zip(&dw) {
                    *gj += d;
                }
            }

            // Embedding gradient: per-example token-span buffers, then an
            // ordered scatter into the shared table gradient.
            if store.get(self.embed.table).trainable {
                let weight = store.get(self.weights[wi]).data().to_vec();
                let d_emb: Vec<Vec<f64>> = par::map_collect_indexed(bsz, |b| {
                    let dzb = &dz[b];
                    let explicit = dzb.len() / f;
                    let span = if explicit == 0 {
                        0
                    } else {
                        (explicit - 1 + w).min(batch.seq_len())
                    };
                    let mut buf = vec![0.0; span * e];
                    for i in 0..explicit {
                        for fi in 0..f {
                            let g = dzb[i * f + fi];
                            if g == 0.0 {
                                continue;
                            }
                            let wr = &weight[fi * w * e..(fi + 1) * w * e];
                            for t in 0..w {
                                let pos = i + t;
                                if pos >= span {
                                    break;
                                }
                                let dst = &mut buf[pos * e..(pos + 1) * e];
                                for (slot, &wv) in dst.iter_mut().zip(&wr[t * e..(t + 1) * e]) {
                                    *slot += wv * g;
                                }
                            }
                        }
                    }
                    buf
                });
                let freeze_pad = self.embed.freeze_pad_row;
                let grad = store.get_mut(self.embed.table).tensor.grad_mut();
                for (b, buf) in d_emb.iter().enumerate() {
                    let seq = batch.row(b);
                    for (pos, chunk) in buf.chunks_exact(e).enumerate() {
                        let idx = seq[pos] as usize;
                        if freeze_pad && idx == 0 {
                            continue;
                        }
                        let dst = &mut grad[idx * e..(idx + 1) * e];
                        for (slot, &v) in dst.iter_mut().zip(chunk) {
                            *slot += v;
                        }
                    }
                }
                if pad_row_nonzero && !freeze_pad {
                    // All-padding windows read row 0 at every tap.
                    let dst = &mut grad[..e];
                    for fi in 0..f {
                        if pad_mass[fi] == 0.0 {
                            continue;
                        }
                        let wr = &weight[fi * w * e..(fi + 1) * w * e];
                        for t in 0..w {
                            for (slot, &wv) in dst.iter_mut().zip(&wr[t * e..(t + 1) * e]) {
                                *slot += wv * pad_mass[fi];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// BN transform + ReLU + max-over-positions for one window; writes the pooled
/// values into `out` column block `[col0, col0 + f)` and returns argmaxes.
#[allow(clippy::too_many_arguments)]
fn pool_window(
    z: &[Vec<f64>],
    z_pad: &[f64],
    mean: &[f64],
    sigma: &[f64],
    gamma: &[f64],
    beta: &[f64],
    batch: &EncodedBatch,
    n_pos: usize,
    f: usize,
    out: &mut [f64],
    width: usize,
    col0: usize,
) -> Vec<u32> {
    let a_pad: Vec<f64> = (0..f)
        .map(|fi| relu_scalar(gamma[fi] * (z_pad[fi] - mean[fi]) / sigma[fi] + beta[fi]))
        .collect();
    let mut argmax = vec![0u32; z.len() * f];
    let rows: Vec<(Vec<f64>, Vec<u32>)> = par::map_collect_indexed(z.len(), |b| {
        let zb = &z[b];
        let explicit = zb.len() / f;
        let has_pad = explicit < n_pos;
        let mut best = vec![f64::NEG_INFINITY; f];
        let mut arg = vec![PAD_ARGMAX; f];
        for (i, chunk) in zb.chunks_exact(f).enumerate() {
            for fi in 0..f {
                let a = relu_scalar(gamma[fi] * (chunk[fi] - mean[fi]) / sigma[fi] + beta[fi]);
                if a > best[fi] {
                    best[fi] = a;
                    arg[fi] = i as u32;
                }
            }
        }
        for fi in 0..f {
            if has_pad && a_pad[fi] > best[fi] {
                best[fi] = a_pad[fi];
                arg[fi] = PAD_ARGMAX;
            }
        }
        (best, arg)
    });
    for (b, (best, arg)) in rows.into_iter().enumerate() {
        debug_assert!(batch.real_len(b).min(n_pos) * f == z[b].len());
        out[b * width + col0..b * width + col0 + f].copy_from_slice(&best);
        argmax[b * f..(b + 1) * f].copy_from_slice(&arg);
    }
    argmax
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::rng::stream;

    fn block(
        vocab: usize,
        e: usize,
        windows: usize,
        f: usize,
        freeze_pad: bool,
        seed: u64,
    ) -> (ParamStore, ConvBlock) {
        let mut store = ParamStore::new();
        let mut rng = stream(seed, "conv-test");
        let embed = Embedding::new(&mut store, "embed", vocab, e, freeze_pad, &mut rng);
        let conv = ConvBlock::new(
            &mut store,
            "conv",
            embed,
            ConvBlockSpec::new(windows, f),
            &mut rng,
        );
        (store, conv)
    }

    #[test]
    fn output_width_is_windows_times_filters() {
        let spec = ConvBlockSpec::new(4, 128);
        assert_eq!(spec.out_width(), 512);
    }

    #[test]
    fn sequence_shorter_than_max_window_is_rejected() {
        let (store, conv) = block(5, 3, 4, 2, true, 1);
        let batch = EncodedBatch::new(&[vec![1, 2, 3]]).unwrap();
        assert!(conv.forward_infer(&store, &batch).is_err());
    }

    #[test]
    fn all_zero_input_with_zero_bias_pools_relu_of_normalized_zero() {
        // Pre-activations are all zero, so train-mode BN maps them to zero
        // and the pooled output is relu(beta) = 0 per filter.
        let (mut store, conv) = block(5, 3, 2, 4, true, 2);
        let batch = EncodedBatch::new(&[vec![0; 6], vec![0; 6]]).unwrap();
        let (out, _) = conv.forward_train(&mut store, &batch, Mode::Train).unwrap();
        assert_eq!(out.len(), 2 * conv.spec.out_width());
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_filter_window_one_matches_hand_computation() {
        // One filter, window 1, identity-ish weight on a known 3x1 input.
        // In infer mode with fresh running stats (mean 0, var 1) the output
        // is max(products) / sqrt(1 + eps).
        let mut store = ParamStore::new();
        let table = store.insert(
            "embed",
            Tensor::new(vec![4, 1], vec![0.0, 0.5, -1.0, 2.0]).unwrap(),
            true,
        );
        let embed = Embedding {
            table,
            vocab_size: 4,
            dim: 1,
            freeze_pad_row: true,
        };
        let mut rng = stream(3, "conv-test");
        let conv = ConvBlock::new(
            &mut store,
            "conv",
            embed,
            ConvBlockSpec {
                window_sizes: vec![1],
                filters_per_window: 1,
            },
            &mut rng,
        );
        store.load_data("conv.w1.weight", vec![3.0]).unwrap();
        store.load_data("conv.w1.bias", vec![0.0]).unwrap();

        let batch = EncodedBatch::new(&[vec![1, 2, 3]]).unwrap();
        let out = conv.forward_infer(&store, &batch).unwrap();
        let expected = (3.0f64 * 2.0) / (1.0 + BN_EPSILON).sqrt();
        assert!((out[0] - expected).abs() < 1e-12, "got {} want {expected}", out[0]);
    }

    #[test]
    fn padding_extension_does_not_change_infer_output() {
        let (store, conv) = block(9, 4, 3, 5, true, 4);
        let tokens = vec![3u32, 7, 1, 4];
        let mut short = tokens.clone();
        short.resize(10, 0);
        let mut long = tokens.clone();
        long.resize(40, 0);
        let a = conv
            .forward_infer(&store, &EncodedBatch::new(&[short]).unwrap())
            .unwrap();
        let b = conv
            .forward_infer(&store, &EncodedBatch::new(&[long]).unwrap())
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn filter_axis_is_permutation_covariant() {
        // Swapping two filters' weights/biases swaps their output columns.
        let (mut store, conv) = block(9, 4, 1, 3, true, 5);
        let batch = EncodedBatch::new(&[vec![1, 2, 3, 4, 0, 0]]).unwrap();
        let before = conv.forward_infer(&store, &batch).unwrap();

        let wid = store.id_of("conv.w1.weight").unwrap();
        let e = 4;
        {
            let data = store.get_mut(wid).tensor.data_mut();
            for d in 0..e {
                data.swap(d, e + d);
            }
        }
        let bid = store.id_of("conv.w1.bias").unwrap();
        store.get_mut(bid).tensor.data_mut().swap(0, 1);
        let after = conv.forward_infer(&store, &batch).unwrap();
        assert_eq!(before[0], after[1]);
        assert_eq!(before[1], after[0]);
        assert_eq!(before[2], after[2]);
    }

    #[test]
    fn empty_sequence_forward_is_finite() {
        let (mut store, conv) = block(9, 4, 2, 3, true, 6);
        let batch = EncodedBatch::new(&[vec![0; 6], vec![1, 2, 0, 0, 0, 0]]).unwrap();
        let (out, _) = conv.forward_train(&mut store, &batch, Mode::Train).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        let out = conv.forward_infer(&store, &batch).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }
}
