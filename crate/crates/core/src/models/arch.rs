//! Executable model structures and their forward/backward passes.
//!
//! Each architecture is a fixed composition of kernel layers with explicit
//! contexts, built deterministically from its hyperparameters and a seed.
//! Parameter names are stable and namespaced so checkpoints can be reloaded
//! and sub-models can be adopted into the full model under a prefix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    BatchNorm, BatchNormCtx, ConvBlock, ConvBlockCtx, ConvBlockSpec, Dense, DenseCtx, Dropout,
    Embedding, EncodedBatch, Mode, ParamStore,
};
use crate::Result;

pub(crate) fn relu_forward(x: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut y = vec![0.0; x.len()];
    let mut mask = vec![false; x.len()];
    for i in 0..x.len() {
        if x[i] > 0.0 {
            y[i] = x[i];
            mask[i] = true;
        }
    }
    (y, mask)
}

pub(crate) fn relu_backward(d_out: &[f64], mask: &[bool]) -> Vec<f64> {
    d_out
        .iter()
        .zip(mask)
        .map(|(d, &m)| if m { *d } else { 0.0 })
        .collect()
}

// ---------------------------------------------------------------------------
// Content model (also the action model's structure and the full model's base)
// ---------------------------------------------------------------------------

/// Hyperparameters of the content/action architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentHyper {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub conv: ConvBlockSpec,
    pub fc1: usize,
    pub fc2: usize,
    pub dropout: f64,
    pub s_subject: usize,
    pub s_content_train: usize,
    pub s_content_infer: usize,
}

impl ContentHyper {
    pub fn with_defaults(vocab_size: usize, seq: &crate::text::SequenceSpec) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            conv: ConvBlockSpec::new(4, 128),
            fc1: 128,
            fc2: 128,
            dropout: 0.4,
            s_subject: seq.subject,
            s_content_train: seq.content_train,
            s_content_infer: seq.content_infer,
        }
    }

    /// Width of the concatenated subject/content conv features.
    pub fn concat_width(&self) -> usize {
        2 * self.conv.out_width()
    }
}

/// Subject + content CNN up to the 128-unit representation: shared embedding
/// table, two conv blocks, concat, dropout, and two FC + BN + ReLU stages.
/// The standalone content/action models put a dropout + 2-unit output layer
/// on top ([`ContentArch`]); the full model consumes the representation
/// directly.
pub struct ContentTrunk {
    pub hyper: ContentHyper,
    pub conv_subject: ConvBlock,
    pub conv_content: ConvBlock,
    pub drop1: Dropout,
    pub fc1: Dense,
    pub bn1: BatchNorm,
    pub fc2: Dense,
    pub bn2: BatchNorm,
}

/// Content/action model: trunk + dropout + output layer.
pub struct ContentArch {
    pub trunk: ContentTrunk,
    pub drop2: Dropout,
    pub out: Dense,
}

pub struct ContentTrunkCtx {
    conv_subject: ConvBlockCtx,
    conv_content: ConvBlockCtx,
    drop1_mask: Vec<f64>,
    fc1: DenseCtx,
    bn1: BatchNormCtx,
    relu1: Vec<bool>,
    fc2: DenseCtx,
    bn2: BatchNormCtx,
    relu2: Vec<bool>,
}

pub struct ContentCtx {
    trunk: ContentTrunkCtx,
    drop2_mask: Vec<f64>,
    out: DenseCtx,
}

impl ContentTrunk {
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        hyper: &ContentHyper,
        rng: &mut impl Rng,
    ) -> Self {
        let embed = Embedding::new(
            store,
            &format!("{prefix}embed.table"),
            hyper.vocab_size,
            hyper.embed_dim,
            true,
            rng,
        );
        let conv_subject = ConvBlock::new(
            store,
            &format!("{prefix}conv_subject"),
            embed.clone(),
            hyper.conv.clone(),
            rng,
        );
        let conv_content = ConvBlock::new(
            store,
            &format!("{prefix}conv_content"),
            embed.clone(),
            hyper.conv.clone(),
            rng,
        );
        let concat = hyper.concat_width();
        let fc1 = Dense::new(store, &format!("{prefix}fc1"), concat, hyper.fc1, 0.0, 0.0, rng);
        let bn1 = BatchNorm::new(store, &format!("{prefix}bn1"), hyper.fc1);
        let fc2 = Dense::new(store, &format!("{prefix}fc2"), hyper.fc1, hyper.fc2, 0.0, 0.0, rng);
        let bn2 = BatchNorm::new(store, &format!("{prefix}bn2"), hyper.fc2);
        Self {
            hyper: hyper.clone(),
            conv_subject,
            conv_content,
            drop1: Dropout::new(hyper.dropout).expect("validated dropout rate"),
            fc1,
            bn1,
            fc2,
            bn2,
        }
    }

    /// Train-mode trunk up to the 128-unit representation (post-ReLU of the
    /// second FC block).
    pub fn trunk_train(
        &self,
        store: &mut ParamStore,
        subject: &EncodedBatch,
        content: &EncodedBatch,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, ContentTrunkCtx)> {
        let batch = subject.batch_size();
        let (subj_out, conv_subject) = self.conv_subject.forward_train(store, subject, mode)?;
        let (cont_out, conv_content) = self.conv_content.forward_train(store, content, mode)?;
        let width = self.hyper.conv.out_width();
        let mut x = vec![0.0; batch * 2 * width];
        for b in 0..batch {
            x[b * 2 * width..b * 2 * width + width]
                .copy_from_slice(&subj_out[b * width..(b + 1) * width]);
            x[b * 2 * width + width..(b + 1) * 2 * width]
                .copy_from_slice(&cont_out[b * width..(b + 1) * width]);
        }
        let drop1_mask = self.drop1.forward(&mut x, mode, rng);
        let (y1, fc1) = self.fc1.forward(store, &x, batch)?;
        let (n1, bn1) = self.bn1.forward(store, &y1, batch, mode)?;
        let bn1 = bn1.expect("batch-stats mode returns ctx");
        let (h1, relu1) = relu_forward(&n1);
        let (y2, fc2) = self.fc2.forward(store, &h1, batch)?;
        let (n2, bn2) = self.bn2.forward(store, &y2, batch, mode)?;
        let bn2 = bn2.expect("batch-stats mode returns ctx");
        let (tap, relu2) = relu_forward(&n2);
        Ok((
            tap,
            ContentTrunkCtx {
                conv_subject,
                conv_content,
                drop1_mask,
                fc1,
                bn1,
                relu1,
                fc2,
                bn2,
                relu2,
            },
        ))
    }

    /// Infer-mode trunk; read-only.
    pub fn trunk_infer(
        &self,
        store: &ParamStore,
        subject: &EncodedBatch,
        content: &EncodedBatch,
    ) -> Result<Vec<f64>> {
        let batch = subject.batch_size();
        let subj_out = self.conv_subject.forward_infer(store, subject)?;
        let cont_out = self.conv_content.forward_infer(store, content)?;
        let width = self.hyper.conv.out_width();
        let mut x = vec![0.0; batch * 2 * width];
        for b in 0..batch {
            x[b * 2 * width..b * 2 * width + width]
                .copy_from_slice(&subj_out[b * width..(b + 1) * width]);
            x[b * 2 * width + width..(b + 1) * 2 * width]
                .copy_from_slice(&cont_out[b * width..(b + 1) * width]);
        }
        let (y1, _) = self.fc1.forward(store, &x, batch)?;
        let (n1, _) = bn_infer(&self.bn1, store, &y1, batch)?;
        let (h1, _) = relu_forward(&n1);
        let (y2, _) = self.fc2.forward(store, &h1, batch)?;
        let (n2, _) = bn_infer(&self.bn2, store, &y2, batch)?;
        let (tap, _) = relu_forward(&n2);
        Ok(tap)
    }

    pub fn trunk_backward(
        &self,
        store: &mut ParamStore,
        subject: &EncodedBatch,
        content: &EncodedBatch,
        ctx: &ContentTrunkCtx,
        d_tap: &[f64],
    ) {
        let d_n2 = relu_backward(d_tap, &ctx.relu2);
        let d_y2 = self.bn2.backward(store, &ctx.bn2, &d_n2);
        let d_h1 = self.fc2.backward(store, &ctx.fc2, &d_y2);
        let d_n1 = relu_backward(&d_h1, &ctx.relu1);
        let d_y1 = self.bn1.backward(store, &ctx.bn1, &d_n1);
        let mut d_x = self.fc1.backward(store, &ctx.fc1, &d_y1);
        Dropout::backward(&mut d_x, &ctx.drop1_mask);
        let width = self.hyper.conv.out_width();
        let batch = subject.batch_size();
        let mut d_subj = vec![0.0; batch * width];
        let mut d_cont = vec![0.0; batch * width];
        for b in 0..batch {
            d_subj[b * width..(b + 1) * width]
                .copy_from_slice(&d_x[b * 2 * width..b * 2 * width + width]);
            d_cont[b * width..(b + 1) * width]
                .copy_from_slice(&d_x[b * 2 * width + width..(b + 1) * 2 * width]);
        }
        self.conv_subject
            .backward(store, subject, &ctx.conv_subject, &d_subj);
        self.conv_content
            .backward(store, content, &ctx.conv_content, &d_cont);
    }

    pub fn penalty(&self, store: &ParamStore) -> f64 {
        self.fc1.penalty(store) + self.fc2.penalty(store)
    }
}

impl ContentArch {
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        hyper: &ContentHyper,
        rng: &mut impl Rng,
    ) -> Self {
        let trunk = ContentTrunk::build(store, prefix, hyper, rng);
        let out = Dense::new(store, &format!("{prefix}out"), hyper.fc2, 2, 0.0, 0.0, rng);
        Self {
            drop2: Dropout::new(hyper.dropout).expect("validated dropout rate"),
            trunk,
            out,
        }
    }

    pub fn forward_train(
        &self,
        store: &mut ParamStore,
        subject: &EncodedBatch,
        content: &EncodedBatch,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, ContentCtx)> {
        let batch = subject.batch_size();
        let (mut tap, trunk) = self.trunk.trunk_train(store, subject, content, mode, rng)?;
        let drop2_mask = self.drop2.forward(&mut tap, mode, rng);
        let (logits, out) = self.out.forward(store, &tap, batch)?;
        Ok((
            logits,
            ContentCtx {
                trunk,
                drop2_mask,
                out,
            },
        ))
    }

    pub fn forward_infer(
        &self,
        store: &ParamStore,
        subject: &EncodedBatch,
        content: &EncodedBatch,
    ) -> Result<Vec<f64>> {
        let tap = self.trunk.trunk_infer(store, subject, content)?;
        let (logits, _) = self.out.forward(store, &tap, subject.batch_size())?;
        Ok(logits)
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        subject: &EncodedBatch,
        content: &EncodedBatch,
        ctx: &ContentCtx,
        d_logits: &[f64],
    ) {
        let mut d_tap = self.out.backward(store, &ctx.out, d_logits);
        Dropout::backward(&mut d_tap, &ctx.drop2_mask);
        self.trunk
            .trunk_backward(store, subject, content, &ctx.trunk, &d_tap);
    }

    pub fn penalty(&self, store: &ParamStore) -> f64 {
        self.trunk.penalty(store) + self.out.penalty(store)
    }
}

fn bn_infer(
    bn: &BatchNorm,
    store: &ParamStore,
    x: &[f64],
    batch: usize,
) -> Result<(Vec<f64>, Option<BatchNormCtx>)> {
    // Infer mode never mutates; the kernel API takes &mut for the train path.
    // A local clone of the four small BN parameter vectors would also work,
    // but reading through the store directly keeps this allocation-free.
    let mean = store.get(bn.running_mean).data();
    let var = store.get(bn.running_var).data();
    let gamma = store.get(bn.gamma).data();
    let beta = store.get(bn.beta).data();
    let c = bn.channels;
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for j in 0..c {
            let sigma = (var[j] + crate::nn::BN_EPSILON).sqrt();
            y[b * c + j] = gamma[j] * (x[b * c + j] - mean[j]) / sigma + beta[j];
        }
    }
    Ok((y, None))
}

// ---------------------------------------------------------------------------
// Sender model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenderHyper {
    pub trig_vocab_size: usize,
    pub name_vocab_size: usize,
    pub embed_dim: usize,
    pub conv: ConvBlockSpec,
    pub fc1: usize,
    pub fc1_l2: f64,
    pub out_l1: f64,
    pub out_l2: f64,
    pub dropout: f64,
    pub s_address: usize,
    pub s_name: usize,
}

impl SenderHyper {
    pub fn with_defaults(
        trig_vocab_size: usize,
        name_vocab_size: usize,
        seq: &crate::text::SequenceSpec,
    ) -> Self {
        Self {
            trig_vocab_size,
            name_vocab_size,
            embed_dim: 64,
            conv: ConvBlockSpec::new(3, 128),
            fc1: 64,
            fc1_l2: 0.001,
            out_l1: 0.0001,
            out_l2: 0.0001,
            dropout: 0.6,
            s_address: seq.address,
            s_name: seq.name,
        }
    }

    /// Width of the concatenated trigram/name branch features.
    pub fn concat_width(&self) -> usize {
        2 * self.conv.out_width()
    }
}

/// Letter-trigram branch + sender-name branch, each conv block + dropout,
/// concatenated into two linear layers.
pub struct SenderArch {
    pub hyper: SenderHyper,
    pub conv_trig: ConvBlock,
    pub conv_name: ConvBlock,
    pub drop: Dropout,
    pub fc1: Dense,
    pub out: Dense,
}

pub struct SenderCtx {
    conv_trig: ConvBlockCtx,
    conv_name: ConvBlockCtx,
    drop_trig_mask: Vec<f64>,
    drop_name_mask: Vec<f64>,
    fc1: DenseCtx,
    out: DenseCtx,
}

impl SenderArch {
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        hyper: &SenderHyper,
        rng: &mut impl Rng,
    ) -> Self {
        let embed_trig = Embedding::new(
            store,
            &format!("{prefix}trig_embed.table"),
            hyper.trig_vocab_size,
            hyper.embed_dim,
            true,
            rng,
        );
        let embed_name = Embedding::new(
            store,
            &format!("{prefix}name_embed.table"),
            hyper.name_vocab_size,
            hyper.embed_dim,
            true,
            rng,
        );
        let conv_trig = ConvBlock::new(
            store,
            &format!("{prefix}conv_trig"),
            embed_trig.clone(),
            hyper.conv.clone(),
            rng,
        );
        let conv_name = ConvBlock::new(
            store,
            &format!("{prefix}conv_name"),
            embed_name.clone(),
            hyper.conv.clone(),
            rng,
        );
        let fc1 = Dense::new(
            store,
            &format!("{prefix}fc1"),
            hyper.concat_width(),
            hyper.fc1,
            0.0,
            hyper.fc1_l2,
            rng,
        );
        let out = Dense::new(
            store,
            &format!("{prefix}out"),
            hyper.fc1,
            2,
            hyper.out_l1,
            hyper.out_l2,
            rng,
        );
        Self {
            hyper: hyper.clone(),
            conv_trig,
            conv_name,
            drop: Dropout::new(hyper.dropout).expect("validated dropout rate"),
            fc1,
            out,
        }
    }

    pub fn forward_train(
        &self,
        store: &mut ParamStore,
        trig: &EncodedBatch,
        name: &EncodedBatch,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, SenderCtx)> {
        let batch = trig.batch_size();
        let (mut trig_out, conv_trig) = self.conv_trig.forward_train(store, trig, mode)?;
        let (mut name_out, conv_name) = self.conv_name.forward_train(store, name, mode)?;
        let drop_trig_mask = self.drop.forward(&mut trig_out, mode, rng);
        let drop_name_mask = self.drop.forward(&mut name_out, mode, rng);
        let x = concat_pair(&trig_out, &name_out, batch, self.hyper.conv.out_width());
        let (h, fc1) = self.fc1.forward(store, &x, batch)?;
        let (logits, out) = self.out.forward(store, &h, batch)?;
        Ok((
            logits,
            SenderCtx {
                conv_trig,
                conv_name,
                drop_trig_mask,
                drop_name_mask,
                fc1,
                out,
            },
        ))
    }

    pub fn forward_infer(
        &self,
        store: &ParamStore,
        trig: &EncodedBatch,
        name: &EncodedBatch,
    ) -> Result<Vec<f64>> {
        let batch = trig.batch_size();
        let trig_out = self.conv_trig.forward_infer(store, trig)?;
        let name_out = self.conv_name.forward_infer(store, name)?;
        let x = concat_pair(&trig_out, &name_out, batch, self.hyper.conv.out_width());
        let (h, _) = self.fc1.forward(store, &x, batch)?;
        let (logits, _) = self.out.forward(store, &h, batch)?;
        Ok(logits)
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        trig: &EncodedBatch,
        name: &EncodedBatch,
        ctx: &SenderCtx,
        d_logits: &[f64],
    ) {
        let batch = trig.batch_size();
        let d_h = self.out.backward(store, &ctx.out, d_logits);
        let d_x = self.fc1.backward(store, &ctx.fc1, &d_h);
        let width = self.hyper.conv.out_width();
        let (mut d_trig, mut d_name) = split_pair(&d_x, batch, width);
        Dropout::backward(&mut d_trig, &ctx.drop_trig_mask);
        Dropout::backward(&mut d_name, &ctx.drop_name_mask);
        self.conv_trig.backward(store, trig, &ctx.conv_trig, &d_trig);
        self.conv_name.backward(store, name, &ctx.conv_name, &d_name);
    }

    pub fn penalty(&self, store: &ParamStore) -> f64 {
        self.fc1.penalty(store) + self.out.penalty(store)
    }
}

fn concat_pair(a: &[f64], b: &[f64], batch: usize, width: usize) -> Vec<f64> {
    let mut x = vec![0.0; batch * 2 * width];
    for bi in 0..batch {
        x[bi * 2 * width..bi * 2 * width + width]
            .copy_from_slice(&a[bi * width..(bi + 1) * width]);
        x[bi * 2 * width + width..(bi + 1) * 2 * width]
            .copy_from_slice(&b[bi * width..(bi + 1) * width]);
    }
    x
}

fn split_pair(x: &[f64], batch: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; batch * width];
    let mut b = vec![0.0; batch * width];
    for bi in 0..batch {
        a[bi * width..(bi + 1) * width]
            .copy_from_slice(&x[bi * 2 * width..bi * 2 * width + width]);
        b[bi * width..(bi + 1) * width]
            .copy_from_slice(&x[bi * 2 * width + width..(bi + 1) * 2 * width]);
    }
    (a, b)
}

// ---------------------------------------------------------------------------
// Salutation model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalutationHyper {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub conv: ConvBlockSpec,
    pub fc1: usize,
    pub dropout: f64,
    pub s_salutation: usize,
}

impl SalutationHyper {
    pub fn with_defaults(vocab_size: usize, seq: &crate::text::SequenceSpec) -> Self {
        Self {
            vocab_size,
            embed_dim: 128,
            conv: ConvBlockSpec::new(3, 128),
            fc1: 64,
            dropout: 0.6,
            s_salutation: seq.salutation,
        }
    }
}

/// Beginning-of-body CNN: embedding, conv block, dropout, FC-64 + ReLU (the
/// 64-unit representation consumed by the full model), FC-2.
pub struct SalutationArch {
    pub hyper: SalutationHyper,
    pub conv: ConvBlock,
    pub drop: Dropout,
    pub fc1: Dense,
    pub out: Dense,
}

pub struct SalutationCtx {
    conv: ConvBlockCtx,
    drop_mask: Vec<f64>,
    fc1: DenseCtx,
    relu1: Vec<bool>,
    out: DenseCtx,
}

impl SalutationArch {
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        hyper: &SalutationHyper,
        rng: &mut impl Rng,
    ) -> Self {
        let embed = Embedding::new(
            store,
            &format!("{prefix}embed.table"),
            hyper.vocab_size,
            hyper.embed_dim,
            true,
            rng,
        );
        let conv = ConvBlock::new(
            store,
            &format!("{prefix}conv"),
            embed.clone(),
            hyper.conv.clone(),
            rng,
        );
        let fc1 = Dense::new(
            store,
            &format!("{prefix}fc1"),
            hyper.conv.out_width(),
            hyper.fc1,
            0.0,
            0.0,
            rng,
        );
        let out = Dense::new(store, &format!("{prefix}out"), hyper.fc1, 2, 0.0, 0.0, rng);
        Self {
            hyper: hyper.clone(),
            conv,
            drop: Dropout::new(hyper.dropout).expect("validated dropout rate"),
            fc1,
            out,
        }
    }

    pub fn forward_train(
        &self,
        store: &mut ParamStore,
        input: &EncodedBatch,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, SalutationCtx)> {
        let batch = input.batch_size();
        let (mut x, conv) = self.conv.forward_train(store, input, mode)?;
        let drop_mask = self.drop.forward(&mut x, mode, rng);
        let (y1, fc1) = self.fc1.forward(store, &x, batch)?;
        let (tap, relu1) = relu_forward(&y1);
        let (logits, out) = self.out.forward(store, &tap, batch)?;
        Ok((
            logits,
            SalutationCtx {
                conv,
                drop_mask,
                fc1,
                relu1,
                out,
            },
        ))
    }

    /// Infer-mode logits plus the 64-unit representation.
    pub fn forward_infer_with_tap(
        &self,
        store: &ParamStore,
        input: &EncodedBatch,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let batch = input.batch_size();
        let x = self.conv.forward_infer(store, input)?;
        let (y1, _) = self.fc1.forward(store, &x, batch)?;
        let (tap, _) = relu_forward(&y1);
        let (logits, _) = self.out.forward(store, &tap, batch)?;
        Ok((logits, tap))
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        input: &EncodedBatch,
        ctx: &SalutationCtx,
        d_logits: &[f64],
    ) {
        let d_tap = self.out.backward(store, &ctx.out, d_logits);
        let d_y1 = relu_backward(&d_tap, &ctx.relu1);
        let mut d_x = self.fc1.backward(store, &ctx.fc1, &d_y1);
        Dropout::backward(&mut d_x, &ctx.drop_mask);
        self.conv.backward(store, input, &ctx.conv, &d_x);
    }

    pub fn penalty(&self, store: &ParamStore) -> f64 {
        self.fc1.penalty(store) + self.out.penalty(store)
    }
}
