//! Minimal reverse-mode neural network kernel.
//!
//! Only the fixed layer set the classifier architectures need is provided:
//! embedding lookup, temporal convolution blocks (conv → batch norm → ReLU →
//! max-pool-over-time), dense layers with L1/L2 penalties, inverted dropout,
//! softmax cross-entropy, and Adam. Each layer exposes an explicit
//! forward/backward pair; there is no general-purpose autograd tape.
//!
//! All computation is in `f64`. Checkpoints store parameters as little-endian
//! `f32` (see `models::checkpoint`).

mod adam;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod embedding;
pub mod gradcheck;
mod loss;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use batchnorm::{BatchNorm, BatchNormCtx, BN_EPSILON, BN_MOMENTUM};
pub use conv::{ConvBlock, ConvBlockCtx, ConvBlockSpec, EncodedBatch};
pub(crate) use conv::dot as conv_dot;
pub use dense::{Dense, DenseCtx};
pub use dropout::Dropout;
pub use embedding::Embedding;
pub use loss::{softmax_cross_entropy, softmax_probs, SoftmaxCeOutput};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// Forward-pass mode.
///
/// - `Train`: batch-norm uses batch statistics and folds them into the
///   running moments at [`BN_MOMENTUM`]; dropout is active.
/// - `Infer`: deterministic and read-only; frozen running moments, dropout
///   is the identity.
/// - `Calibrate`: re-estimates the running moments as an exact cumulative
///   average over calibration batches (batch `k` carries momentum
///   `k / (k + 1)`), with dropout disabled so the statistics match the
///   inference-time activation distribution. Run after training, when the
///   exponential average would still remember stale early-training activations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Train,
    Infer,
    Calibrate { momentum: f64 },
}

impl Mode {
    /// Whether dropout masks apply.
    pub(crate) fn dropout_active(self) -> bool {
        matches!(self, Mode::Train)
    }

    /// Batch-norm running-moment update weight, when batch stats are in use.
    pub(crate) fn bn_momentum(self) -> Option<f64> {
        match self {
            Mode::Train => Some(BN_MOMENTUM),
            Mode::Calibrate { momentum } => Some(momentum),
            Mode::Infer => None,
        }
    }
}
