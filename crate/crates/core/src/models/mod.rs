//! The four sub-model graphs, score rectification, and the full fusion model.
//!
//! - content model: subject + content words → Conv Block [1..4]x128 per input
//!   → 1024-wide concat → two FC-128 + BN + ReLU stages → dropout → FC-2;
//! - sender model: address letter-trigrams and sender-name words, each
//!   through Conv Block [1..3]x128 + dropout → 768-wide concat → FC-64 (L2)
//!   → FC-2 (L1+L2);
//! - action model: the content architecture trained on behavioral labels;
//! - salutation model: beginning-of-body words → conv block + dropout →
//!   FC-64 + ReLU (the 64-unit representation) → FC-2;
//! - full model: the content trunk's 128-unit representation (trainable)
//!   concatenated with rectified sender signals (p+, p-), the rectified
//!   negative action signal, and the frozen salutation representation -
//!   195 features into a fresh FC-2 head. All sender/action/salutation
//!   parameters are frozen.

mod arch;
mod checkpoint;

pub use arch::{ContentHyper, SalutationHyper, SenderHyper};
pub use checkpoint::{file_sha256, load_model, save_model, CHECKPOINT_FORMAT_VERSION};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EmailRecord;
use crate::labels::salutation_input;
use crate::nn::{
    softmax_cross_entropy, softmax_probs, Dense, Dropout, EncodedBatch, Mode, ParamStore,
};
use crate::text::{encode, letter_trigrams, tokenize_words, SequenceSpec, Vocabulary};
use crate::{par, rng, Error, Result};

use arch::{ContentArch, ContentTrunk, SalutationArch, SenderArch};

// ---------------------------------------------------------------------------
// Rectification
// ---------------------------------------------------------------------------

/// Thresholded probability signals: `p_plus = p` when `p >= q` else 0, and
/// `p_minus = 1 - p` when `1 - p >= q` else 0. With `q > 0.5` at most one of
/// the two is nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectifiedSignal {
    pub p_plus: f64,
    pub p_minus: f64,
    pub q: f64,
}

/// Applies the confidence gate `f(p, q) = p if p >= q else 0` to both sides
/// of a probability. `p` outside `[0, 1]` (or non-finite) is a hard error.
pub fn rectify(p: f64, q: f64) -> Result<RectifiedSignal> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(Error::NumericDivergence(format!(
            "probability {p} outside [0, 1] in rectify"
        )));
    }
    if !q.is_finite() || !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidConfig(format!(
            "rectification threshold {q} outside [0, 1]"
        )));
    }
    let p_minus_raw = 1.0 - p;
    Ok(RectifiedSignal {
        p_plus: if p >= q { p } else { 0.0 },
        p_minus: if p_minus_raw >= q { p_minus_raw } else { 0.0 },
        q,
    })
}

// ---------------------------------------------------------------------------
// Model identity and descriptive layer specs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Content,
    Sender,
    Action,
    Salutation,
    Full,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Content => "content",
            ModelKind::Sender => "sender",
            ModelKind::Action => "action",
            ModelKind::Salutation => "salutation",
            ModelKind::Full => "full",
        };
        f.write_str(s)
    }
}

/// Declarative layer description recorded in checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Embedding { input: String, vocab_size: usize, dim: usize },
    ConvBlock { input: String, windows: Vec<usize>, filters: usize },
    Concat { width: usize },
    Dropout { rate: f64 },
    Dense { in_dim: usize, out_dim: usize, l1: f64, l2: f64 },
    BatchNormRelu { width: usize },
    Relu { width: usize },
    RepresentationTap { width: usize },
    RectifiedSignals { q: f64, signals: Vec<String> },
    SubModel { name: String, trainable: bool },
    Softmax,
}

/// Architecture hyperparameters, serialized into checkpoints and sufficient
/// to rebuild the executable graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ModelHyper {
    Content(ContentHyper),
    Sender(SenderHyper),
    Salutation(SalutationHyper),
    Full(FullHyper),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullHyper {
    pub content: ContentHyper,
    pub sender: SenderHyper,
    pub action: ContentHyper,
    pub salutation: SalutationHyper,
    pub q: f64,
}

impl FullHyper {
    /// Width of the fused feature vector: content representation + p+_sender
    /// + p-_sender + p-_action + salutation representation.
    pub fn fused_width(&self) -> usize {
        self.content.fc2 + 3 + self.salutation.fc1
    }
}

// ---------------------------------------------------------------------------
// Encoded inputs
// ---------------------------------------------------------------------------

/// The four vocabularies, one per input family.
pub struct VocabSet {
    pub word: Vocabulary,
    pub trigram: Vocabulary,
    pub name: Vocabulary,
    pub salutation: Vocabulary,
}

impl VocabSet {
    pub fn hashes(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("word".to_string(), self.word.content_hash().to_string()),
            ("trigram".to_string(), self.trigram.content_hash().to_string()),
            ("name".to_string(), self.name.content_hash().to_string()),
            (
                "salutation".to_string(),
                self.salutation.content_hash().to_string(),
            ),
        ])
    }
}

/// One message encoded for every model input.
#[derive(Debug, Clone)]
pub struct EncodedMessage {
    pub subject: Vec<u32>,
    pub content: Vec<u32>,
    pub address: Vec<u32>,
    pub name: Vec<u32>,
    pub salutation: Vec<u32>,
}

/// Encodes a record against the vocabularies at the given sequence lengths.
/// Infer mode uses the longer content length.
pub fn encode_message(
    rec: &EmailRecord,
    vocabs: &VocabSet,
    seq: &SequenceSpec,
    mode: Mode,
) -> EncodedMessage {
    let s_content = match mode {
        Mode::Infer => seq.content_infer,
        _ => seq.content_train,
    };
    let subject_tokens = tokenize_words(&rec.subject);
    let content_tokens = tokenize_words(&rec.body);
    let trigrams = letter_trigrams(&rec.sender_address, seq.address);
    let name_tokens = tokenize_words(&rec.sender_name);
    let sal_tokens = salutation_input(&rec.body);
    EncodedMessage {
        subject: encode(&subject_tokens, &vocabs.word, seq.subject),
        content: encode(&content_tokens, &vocabs.word, s_content),
        address: encode(&trigrams, &vocabs.trigram, seq.address),
        name: encode(&name_tokens, &vocabs.name, seq.name),
        salutation: encode(&sal_tokens, &vocabs.salutation, seq.salutation),
    }
}

/// Encodes only the inputs `kind` consumes; unused fields stay empty.
pub fn encode_for(
    kind: ModelKind,
    rec: &EmailRecord,
    vocabs: &VocabSet,
    seq: &SequenceSpec,
    mode: Mode,
) -> EncodedMessage {
    let s_content = match mode {
        Mode::Infer => seq.content_infer,
        _ => seq.content_train,
    };
    let mut msg = EncodedMessage {
        subject: Vec::new(),
        content: Vec::new(),
        address: Vec::new(),
        name: Vec::new(),
        salutation: Vec::new(),
    };
    if matches!(kind, ModelKind::Content | ModelKind::Action | ModelKind::Full) {
        msg.subject = encode(&tokenize_words(&rec.subject), &vocabs.word, seq.subject);
        msg.content = encode(&tokenize_words(&rec.body), &vocabs.word, s_content);
    }
    if matches!(kind, ModelKind::Sender | ModelKind::Full) {
        let trigrams = letter_trigrams(&rec.sender_address, seq.address);
        msg.address = encode(&trigrams, &vocabs.trigram, seq.address);
        msg.name = encode(&tokenize_words(&rec.sender_name), &vocabs.name, seq.name);
    }
    if matches!(kind, ModelKind::Salutation | ModelKind::Full) {
        msg.salutation = encode(&salutation_input(&rec.body), &vocabs.salutation, seq.salutation);
    }
    msg
}

/// Encodes a sender-level training example (address + display name).
pub fn encode_sender_example(
    address: &str,
    name: &str,
    vocabs: &VocabSet,
    seq: &SequenceSpec,
) -> EncodedMessage {
    EncodedMessage {
        subject: Vec::new(),
        content: Vec::new(),
        address: encode(&letter_trigrams(address, seq.address), &vocabs.trigram, seq.address),
        name: encode(&tokenize_words(name), &vocabs.name, seq.name),
        salutation: Vec::new(),
    }
}

fn batch_of<F: Fn(&EncodedMessage) -> &Vec<u32>>(
    msgs: &[EncodedMessage],
    field: F,
) -> Result<EncodedBatch> {
    EncodedBatch::from_rows(msgs.iter().map(|m| field(m).as_slice()))
}

// ---------------------------------------------------------------------------
// The full fusion architecture
// ---------------------------------------------------------------------------

struct FullArch {
    content: ContentTrunk,
    sender: SenderArch,
    action: ContentArch,
    salutation: SalutationArch,
    drop_tap: Dropout,
    head: Dense,
    q: f64,
    /// Frozen sub-model outputs are constants per message; training caches
    /// them so repeated epochs pay only for the trainable trunk.
    signal_cache: std::collections::HashMap<Vec<u32>, ([f64; 3], Vec<f64>)>,
}

/// Cache key: all frozen-model inputs, length-prefixed.
fn signal_cache_key(m: &EncodedMessage) -> Vec<u32> {
    let mut key = Vec::with_capacity(
        5 + m.subject.len() + m.content.len() + m.address.len() + m.name.len() + m.salutation.len(),
    );
    for part in [&m.subject, &m.content, &m.address, &m.name, &m.salutation] {
        key.push(part.len() as u32);
        key.extend_from_slice(part);
    }
    key
}

struct FullCtx {
    trunk: arch::ContentTrunkCtx,
    drop_tap_mask: Vec<f64>,
    head: crate::nn::DenseCtx,
}

impl FullArch {
    fn build(store: &mut ParamStore, hyper: &FullHyper, seed: u64) -> Self {
        let mut r_content = rng::stream(seed, "init-full-content");
        let content = ContentTrunk::build(store, "content.", &hyper.content, &mut r_content);
        let mut r_sender = rng::stream(seed, "init-full-sender");
        let sender = SenderArch::build(store, "sender.", &hyper.sender, &mut r_sender);
        let mut r_action = rng::stream(seed, "init-full-action");
        let action = ContentArch::build(store, "action.", &hyper.action, &mut r_action);
        let mut r_sal = rng::stream(seed, "init-full-salutation");
        let salutation = SalutationArch::build(store, "salutation.", &hyper.salutation, &mut r_sal);
        let mut r_head = rng::stream(seed, "init-full-head");
        let head = Dense::new(
            store,
            "head",
            hyper.fused_width(),
            2,
            0.0,
            0.0,
            &mut r_head,
        );
        Self {
            content,
            sender,
            action,
            salutation,
            drop_tap: Dropout::new(hyper.content.dropout).expect("validated dropout rate"),
            head,
            q: hyper.q,
            signal_cache: std::collections::HashMap::new(),
        }
    }

    /// Frozen sub-model signals for a batch: rectified sender p+/p-,
    /// rectified action p-, and the salutation representation. Served from
    /// the cache when every message of the batch is present.
    fn signals(
        &self,
        store: &ParamStore,
        msgs: &[EncodedMessage],
    ) -> Result<(Vec<[f64; 3]>, Vec<f64>)> {
        if !self.signal_cache.is_empty() {
            let cached: Option<(Vec<[f64; 3]>, Vec<f64>)> = msgs
                .iter()
                .map(|m| self.signal_cache.get(&signal_cache_key(m)))
                .collect::<Option<Vec<_>>>()
                .map(|rows| {
                    let signals = rows.iter().map(|(s, _)| *s).collect();
                    let sal_tap = rows.iter().flat_map(|(_, t)| t.iter().copied()).collect();
                    (signals, sal_tap)
                });
            if let Some(hit) = cached {
                return Ok(hit);
            }
        }
        self.compute_signals(store, msgs)
    }

    fn compute_signals(
        &self,
        store: &ParamStore,
        msgs: &[EncodedMessage],
    ) -> Result<(Vec<[f64; 3]>, Vec<f64>)> {
        let trig = batch_of(msgs, |m| &m.address)?;
        let name = batch_of(msgs, |m| &m.name)?;
        let sal = batch_of(msgs, |m| &m.salutation)?;
        let subject = batch_of(msgs, |m| &m.subject)?;
        let content = batch_of(msgs, |m| &m.content)?;

        let sender_logits = self.sender.forward_infer(store, &trig, &name)?;
        let action_logits = self.action.forward_infer(store, &subject, &content)?;
        let (_, sal_tap) = self.salutation.forward_infer_with_tap(store, &sal)?;

        let sender_p = softmax_probs(&sender_logits)?;
        let action_p = softmax_probs(&action_logits)?;
        let mut signals = Vec::with_capacity(msgs.len());
        for b in 0..msgs.len() {
            let rs = rectify(sender_p[2 * b + 1], self.q)?;
            let ra = rectify(action_p[2 * b + 1], self.q)?;
            signals.push([rs.p_plus, rs.p_minus, ra.p_minus]);
        }
        Ok((signals, sal_tap))
    }

    fn fuse(
        &self,
        tap: &[f64],
        signals: &[[f64; 3]],
        sal_tap: &[f64],
        batch: usize,
    ) -> Vec<f64> {
        let c = self.content.hyper.fc2;
        let s = self.salutation.hyper.fc1;
        let width = c + 3 + s;
        let mut fused = vec![0.0; batch * width];
        for b in 0..batch {
            fused[b * width..b * width + c].copy_from_slice(&tap[b * c..(b + 1) * c]);
            fused[b * width + c..b * width + c + 3].copy_from_slice(&signals[b]);
            fused[b * width + c + 3..(b + 1) * width].copy_from_slice(&sal_tap[b * s..(b + 1) * s]);
        }
        fused
    }

    fn forward_train(
        &self,
        store: &mut ParamStore,
        msgs: &[EncodedMessage],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, FullCtx)> {
        let subject = batch_of(msgs, |m| &m.subject)?;
        let content = batch_of(msgs, |m| &m.content)?;
        let (signals, sal_tap) = self.signals(store, msgs)?;
        let (mut tap, trunk) = self
            .content
            .trunk_train(store, &subject, &content, mode, rng)?;
        let drop_tap_mask = self.drop_tap.forward(&mut tap, mode, rng);
        let fused = self.fuse(&tap, &signals, &sal_tap, msgs.len());
        let (logits, head) = self.head.forward(store, &fused, msgs.len())?;
        Ok((
            logits,
            FullCtx {
                trunk,
                drop_tap_mask,
                head,
            },
        ))
    }

    fn forward_infer(&self, store: &ParamStore, msgs: &[EncodedMessage]) -> Result<Vec<f64>> {
        let subject = batch_of(msgs, |m| &m.subject)?;
        let content = batch_of(msgs, |m| &m.content)?;
        let (signals, sal_tap) = self.signals(store, msgs)?;
        let tap = self.content.trunk_infer(store, &subject, &content)?;
        let fused = self.fuse(&tap, &signals, &sal_tap, msgs.len());
        let (logits, _) = self.head.forward(store, &fused, msgs.len())?;
        Ok(logits)
    }

    fn backward(
        &self,
        store: &mut ParamStore,
        msgs: &[EncodedMessage],
        ctx: &FullCtx,
        d_logits: &[f64],
    ) -> Result<()> {
        let subject = batch_of(msgs, |m| &m.subject)?;
        let content = batch_of(msgs, |m| &m.content)?;
        let d_fused = self.head.backward(store, &ctx.head, d_logits);
        let c = self.content.hyper.fc2;
        let width = c + 3 + self.salutation.hyper.fc1;
        let mut d_tap = vec![0.0; msgs.len() * c];
        for b in 0..msgs.len() {
            d_tap[b * c..(b + 1) * c].copy_from_slice(&d_fused[b * width..b * width + c]);
        }
        // Frozen sub-model columns carry no gradient anywhere.
        Dropout::backward(&mut d_tap, &ctx.drop_tap_mask);
        self.content
            .trunk_backward(store, &subject, &content, &ctx.trunk, &d_tap);
        Ok(())
    }
}

enum Arch {
    Content(ContentArch),
    Sender(SenderArch),
    Salutation(SalutationArch),
    Full(Box<FullArch>),
}

// ---------------------------------------------------------------------------
// ModelGraph
// ---------------------------------------------------------------------------

/// A model: ordered layer description, parameter store, input lengths, and
/// the vocabulary hashes its encodings must match.
pub struct ModelGraph {
    pub kind: ModelKind,
    pub hyper: ModelHyper,
    pub layer_specs: Vec<LayerSpec>,
    pub vocab_hashes: BTreeMap<String, String>,
    /// For full models: sha-256 of the four sub-model checkpoint files.
    pub sub_model_hashes: BTreeMap<String, String>,
    pub store: ParamStore,
    arch: Arch,
}

/// Saved training context, opaque to callers.
pub struct ForwardCtx(CtxInner);

enum CtxInner {
    Content(arch::ContentCtx),
    Sender(arch::SenderCtx),
    Salutation(arch::SalutationCtx),
    Full(FullCtx),
}

impl ModelGraph {
    pub(crate) fn assemble(
        kind: ModelKind,
        hyper: ModelHyper,
        vocab_hashes: BTreeMap<String, String>,
        seed: u64,
    ) -> Self {
        let mut store = ParamStore::new();
        let arch = match &hyper {
            ModelHyper::Content(h) => {
                let mut r = rng::stream(seed, &format!("init-{kind}"));
                Arch::Content(ContentArch::build(&mut store, "", h, &mut r))
            }
            ModelHyper::Sender(h) => {
                let mut r = rng::stream(seed, "init-sender");
                Arch::Sender(SenderArch::build(&mut store, "", h, &mut r))
            }
            ModelHyper::Salutation(h) => {
                let mut r = rng::stream(seed, "init-salutation");
                Arch::Salutation(SalutationArch::build(&mut store, "", h, &mut r))
            }
            ModelHyper::Full(h) => Arch::Full(Box::new(FullArch::build(&mut store, h, seed))),
        };
        let layer_specs = layer_specs_for(kind, &hyper);
        Self {
            kind,
            hyper,
            layer_specs,
            vocab_hashes,
            sub_model_hashes: BTreeMap::new(),
            store,
            arch,
        }
    }

    /// Verifies that the given vocabularies match the hashes recorded at
    /// build/training time.
    pub fn verify_vocab_hashes(&self, vocabs: &VocabSet) -> Result<()> {
        let current = vocabs.hashes();
        for (input, expected) in &self.vocab_hashes {
            let actual = current
                .get(input)
                .ok_or_else(|| Error::Data(format!("no vocabulary for input `{input}`")))?;
            if actual != expected {
                return Err(Error::VocabHashMismatch {
                    input: input.clone(),
                    expected: expected.clone(),
                    actual: actual.clone(),
                });
            }
        }
        Ok(())
    }

    /// Train-mode forward: logits plus the backward context.
    pub fn forward_train(
        &mut self,
        msgs: &[EncodedMessage],
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, ForwardCtx)> {
        self.forward_batch_stats(msgs, Mode::Train, rng)
    }

    fn forward_batch_stats(
        &mut self,
        msgs: &[EncodedMessage],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, ForwardCtx)> {
        let store = &mut self.store;
        match &self.arch {
            Arch::Content(a) => {
                let subject = batch_of(msgs, |m| &m.subject)?;
                let content = batch_of(msgs, |m| &m.content)?;
                let (logits, ctx) = a.forward_train(store, &subject, &content, mode, rng)?;
                Ok((logits, ForwardCtx(CtxInner::Content(ctx))))
            }
            Arch::Sender(a) => {
                let trig = batch_of(msgs, |m| &m.address)?;
                let name = batch_of(msgs, |m| &m.name)?;
                let (logits, ctx) = a.forward_train(store, &trig, &name, mode, rng)?;
                Ok((logits, ForwardCtx(CtxInner::Sender(ctx))))
            }
            Arch::Salutation(a) => {
                let sal = batch_of(msgs, |m| &m.salutation)?;
                let (logits, ctx) = a.forward_train(store, &sal, mode, rng)?;
                Ok((logits, ForwardCtx(CtxInner::Salutation(ctx))))
            }
            Arch::Full(a) => {
                let (logits, ctx) = a.forward_train(store, msgs, mode, rng)?;
                Ok((logits, ForwardCtx(CtxInner::Full(ctx))))
            }
        }
    }

    /// Precomputes the frozen sub-model signals of a full model for `msgs`
    /// so that repeated training/validation passes skip the sender, action,
    /// and salutation forwards. No-op for other model kinds. The cache is
    /// read-only afterwards and serves only exact-match batches, so results
    /// are identical with or without it.
    pub fn cache_frozen_signals(&mut self, msgs: &[EncodedMessage]) -> Result<()> {
        let Arch::Full(_) = &self.arch else {
            return Ok(());
        };
        let chunks: Vec<&[EncodedMessage]> = msgs.chunks(256).collect();
        let computed: Vec<Result<(Vec<[f64; 3]>, Vec<f64>)>> = {
            let Arch::Full(a) = &self.arch else { unreachable!() };
            let store = &self.store;
            par::map_collect(&chunks, |chunk| a.compute_signals(store, chunk))
        };
        let Arch::Full(a) = &mut self.arch else { unreachable!() };
        let sal_width = a.salutation.hyper.fc1;
        for (chunk, rows) in chunks.iter().zip(computed) {
            let (signals, sal_tap) = rows?;
            for (i, msg) in chunk.iter().enumerate() {
                a.signal_cache.insert(
                    signal_cache_key(msg),
                    (
                        signals[i],
                        sal_tap[i * sal_width..(i + 1) * sal_width].to_vec(),
                    ),
                );
            }
        }
        Ok(())
    }

    /// Re-estimates every batch-norm running moment as the exact average of
    /// batch statistics over `msgs` (dropout disabled), in fixed chunk order.
    /// Chunks needing batch statistics must hold at least 2 examples; a
    /// short trailing chunk is dropped.
    pub fn recalibrate_bn(&mut self, msgs: &[EncodedMessage], batch_size: usize) -> Result<()> {
        let mut rng = crate::rng::stream(0, "bn-recalibrate"); // dropout is off; stream unused
        let mut k = 0usize;
        for chunk in msgs.chunks(batch_size.max(2)) {
            if chunk.len() < 2 {
                break;
            }
            let momentum = k as f64 / (k + 1) as f64;
            self.forward_batch_stats(chunk, Mode::Calibrate { momentum }, &mut rng)?;
            k += 1;
        }
        Ok(())
    }

    /// Backward from `d_logits`; accumulates parameter gradients.
    pub fn backward(
        &mut self,
        msgs: &[EncodedMessage],
        ctx: &ForwardCtx,
        d_logits: &[f64],
    ) -> Result<()> {
        let store = &mut self.store;
        match (&self.arch, &ctx.0) {
            (Arch::Content(a), CtxInner::Content(c)) => {
                let subject = batch_of(msgs, |m| &m.subject)?;
                let content = batch_of(msgs, |m| &m.content)?;
                a.backward(store, &subject, &content, c, d_logits);
                Ok(())
            }
            (Arch::Sender(a), CtxInner::Sender(c)) => {
                let trig = batch_of(msgs, |m| &m.address)?;
                let name = batch_of(msgs, |m| &m.name)?;
                a.backward(store, &trig, &name, c, d_logits);
                Ok(())
            }
            (Arch::Salutation(a), CtxInner::Salutation(c)) => {
                let sal = batch_of(msgs, |m| &m.salutation)?;
                a.backward(store, &sal, c, d_logits);
                Ok(())
            }
            (Arch::Full(a), CtxInner::Full(c)) => a.backward(store, msgs, c, d_logits),
            _ => Err(Error::InvalidConfig("mismatched forward context".into())),
        }
    }

    /// Regularization penalty this model adds to the training loss.
    pub fn penalty(&self) -> f64 {
        match &self.arch {
            Arch::Content(a) => a.penalty(&self.store),
            Arch::Sender(a) => a.penalty(&self.store),
            Arch::Salutation(a) => a.penalty(&self.store),
            // Frozen sub-model penalties are constants; only trainable layers
            // contribute a meaningful term.
            Arch::Full(a) => a.content.penalty(&self.store) + {
                let head: &Dense = &a.head;
                head.penalty(&self.store)
            },
        }
    }

    /// Infer-mode logits for a batch (deterministic, dropout disabled,
    /// batch-norm on frozen running moments).
    pub fn infer_logits(&self, msgs: &[EncodedMessage]) -> Result<Vec<f64>> {
        let store = &self.store;
        match &self.arch {
            Arch::Content(a) => {
                let subject = batch_of(msgs, |m| &m.subject)?;
                let content = batch_of(msgs, |m| &m.content)?;
                a.forward_infer(store, &subject, &content)
            }
            Arch::Sender(a) => {
                let trig = batch_of(msgs, |m| &m.address)?;
                let name = batch_of(msgs, |m| &m.name)?;
                a.forward_infer(store, &trig, &name)
            }
            Arch::Salutation(a) => {
                let sal = batch_of(msgs, |m| &m.salutation)?;
                a.forward_infer_with_tap(store, &sal).map(|(l, _)| l)
            }
            Arch::Full(a) => a.forward_infer(store, msgs),
        }
    }

    /// Probability of the positive (human) class per message. Inference is
    /// read-only and per-message independent, so it parallelizes over
    /// messages with per-call scratch.
    pub fn predict_probs(&self, msgs: &[EncodedMessage]) -> Result<Vec<f64>> {
        let results: Vec<Result<f64>> = par::map_collect(msgs, |m| {
            let logits = self.infer_logits(std::slice::from_ref(m))?;
            let probs = softmax_probs(&logits)?;
            Ok(probs[1])
        });
        results.into_iter().collect()
    }

    /// Mean infer-mode cross-entropy (no penalties); used for validation.
    pub fn eval_loss(&self, msgs: &[EncodedMessage], labels: &[u8]) -> Result<f64> {
        let logit_rows: Vec<Result<Vec<f64>>> =
            par::map_collect(msgs, |m| self.infer_logits(std::slice::from_ref(m)));
        let mut logits = Vec::with_capacity(msgs.len() * 2);
        for row in logit_rows {
            logits.extend(row?);
        }
        Ok(softmax_cross_entropy(&logits, labels)?.loss)
    }

    /// The salutation model's 64-unit representation (infer mode).
    pub fn salutation_tap(&self, msgs: &[EncodedMessage]) -> Result<Vec<f64>> {
        match &self.arch {
            Arch::Salutation(a) => {
                let sal = batch_of(msgs, |m| &m.salutation)?;
                a.forward_infer_with_tap(&self.store, &sal).map(|(_, t)| t)
            }
            _ => Err(Error::InvalidConfig(
                "salutation_tap is only defined for the salutation model".into(),
            )),
        }
    }

    /// sha-256 over every frozen sub-model parameter (name + data bits) of a
    /// full model, in declaration order.
    pub fn frozen_params_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in self.store.iter() {
            if p.name.starts_with("sender.")
                || p.name.starts_with("action.")
                || p.name.starts_with("salutation.")
            {
                h.update(p.name.as_bytes());
                h.update([0u8]);
                for v in p.data() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        let mut hex = String::with_capacity(64);
        use std::fmt::Write as _;
        for byte in h.finalize() {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

// ---------------------------------------------------------------------------
// Public builders
// ---------------------------------------------------------------------------

/// Content model over the word vocabulary (embedding dim 64 by default).
pub fn build_content_model(
    vocab_w: &Vocabulary,
    seq: &SequenceSpec,
    seed: u64,
) -> ModelGraph {
    let hyper = ContentHyper::with_defaults(vocab_w.size(), seq);
    let hashes = BTreeMap::from([("word".to_string(), vocab_w.content_hash().to_string())]);
    ModelGraph::assemble(ModelKind::Content, ModelHyper::Content(hyper), hashes, seed)
}

/// Action model: exactly the content model's structure, its own weights.
pub fn build_action_model(vocab_w: &Vocabulary, seq: &SequenceSpec, seed: u64) -> ModelGraph {
    let hyper = ContentHyper::with_defaults(vocab_w.size(), seq);
    let hashes = BTreeMap::from([("word".to_string(), vocab_w.content_hash().to_string())]);
    ModelGraph::assemble(ModelKind::Action, ModelHyper::Content(hyper), hashes, seed)
}

/// Sender model over address trigrams and sender-name words.
pub fn build_sender_model(
    vocab_trig: &Vocabulary,
    vocab_name: &Vocabulary,
    seq: &SequenceSpec,
    seed: u64,
) -> ModelGraph {
    let hyper = SenderHyper::with_defaults(vocab_trig.size(), vocab_name.size(), seq);
    let hashes = BTreeMap::from([
        ("trigram".to_string(), vocab_trig.content_hash().to_string()),
        ("name".to_string(), vocab_name.content_hash().to_string()),
    ]);
    ModelGraph::assemble(ModelKind::Sender, ModelHyper::Sender(hyper), hashes, seed)
}

/// Salutation model over the beginning-of-body vocabulary (embedding dim 128).
pub fn build_salutation_model(
    vocab_sal: &Vocabulary,
    seq: &SequenceSpec,
    seed: u64,
) -> ModelGraph {
    let hyper = SalutationHyper::with_defaults(vocab_sal.size(), seq);
    let hashes = BTreeMap::from([(
        "salutation".to_string(),
        vocab_sal.content_hash().to_string(),
    )]);
    ModelGraph::assemble(
        ModelKind::Salutation,
        ModelHyper::Salutation(hyper),
        hashes,
        seed,
    )
}

/// Assembles the full model from four trained sub-models: the content trunk
/// is copied and remains trainable; sender, action, and salutation parameters
/// are copied and frozen; a fresh 195→2 head is initialized from `seed`.
pub fn build_full_model(
    content: &ModelGraph,
    sender: &ModelGraph,
    action: &ModelGraph,
    salutation: &ModelGraph,
    q: f64,
    seed: u64,
) -> Result<ModelGraph> {
    let expect = |g: &ModelGraph, kind: ModelKind| -> Result<()> {
        if g.kind != kind {
            return Err(Error::InvalidConfig(format!(
                "expected a {kind} model, got {}",
                g.kind
            )));
        }
        Ok(())
    };
    expect(content, ModelKind::Content)?;
    expect(sender, ModelKind::Sender)?;
    expect(action, ModelKind::Action)?;
    expect(salutation, ModelKind::Salutation)?;
    if content.vocab_hashes.get("word") != action.vocab_hashes.get("word") {
        return Err(Error::Data(
            "content and action models were trained on different word vocabularies".into(),
        ));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidConfig(format!("q = {q} outside [0, 1]")));
    }

    let (ModelHyper::Content(ch), ModelHyper::Sender(sh), ModelHyper::Content(ah), ModelHyper::Salutation(lh)) =
        (&content.hyper, &sender.hyper, &action.hyper, &salutation.hyper)
    else {
        return Err(Error::InvalidConfig("sub-model hyper/kind mismatch".into()));
    };
    let hyper = FullHyper {
        content: ch.clone(),
        sender: sh.clone(),
        action: ah.clone(),
        salutation: lh.clone(),
        q,
    };

    let mut hashes = BTreeMap::new();
    for g in [content, sender, action, salutation] {
        for (k, v) in &g.vocab_hashes {
            hashes.insert(k.clone(), v.clone());
        }
    }

    let mut full = ModelGraph::assemble(ModelKind::Full, ModelHyper::Full(hyper), hashes, seed);

    // Pull the trained parameters into the prefixed slots.
    let sources: [(&str, &ModelGraph); 4] = [
        ("content.", content),
        ("sender.", sender),
        ("action.", action),
        ("salutation.", salutation),
    ];
    let names: Vec<String> = full.store.iter().map(|p| p.name.clone()).collect();
    for name in &names {
        let Some((prefix, source)) = sources
            .iter()
            .find(|(pfx, _)| name.starts_with(pfx))
            .copied()
        else {
            continue; // the fresh head
        };
        let source_name = &name[prefix.len()..];
        let id = source.store.id_of(source_name).ok_or_else(|| {
            Error::Checkpoint(format!("sub-model `{prefix}` is missing parameter `{source_name}`"))
        })?;
        let data = source.store.get(id).data().to_vec();
        full.store.load_data(name, data)?;
    }

    full.store.freeze_prefix("sender.");
    full.store.freeze_prefix("action.");
    full.store.freeze_prefix("salutation.");
    for p in full.store.iter() {
        let frozen_zone = p.name.starts_with("sender.")
            || p.name.starts_with("action.")
            || p.name.starts_with("salutation.");
        if frozen_zone && p.trainable {
            return Err(Error::InvalidConfig(format!(
                "sub-model parameter `{}` left trainable after assembly",
                p.name
            )));
        }
    }
    Ok(full)
}

fn layer_specs_for(kind: ModelKind, hyper: &ModelHyper) -> Vec<LayerSpec> {
    use LayerSpec::*;
    match hyper {
        ModelHyper::Content(h) => vec![
            Embedding {
                input: "subject+content".into(),
                vocab_size: h.vocab_size,
                dim: h.embed_dim,
            },
            ConvBlock {
                input: "subject".into(),
                windows: h.conv.window_sizes.clone(),
                filters: h.conv.filters_per_window,
            },
            ConvBlock {
                input: "content".into(),
                windows: h.conv.window_sizes.clone(),
                filters: h.conv.filters_per_window,
            },
            Concat {
                width: h.concat_width(),
            },
            Dropout { rate: h.dropout },
            Dense {
                in_dim: h.concat_width(),
                out_dim: h.fc1,
                l1: 0.0,
                l2: 0.0,
            },
            BatchNormRelu { width: h.fc1 },
            Dense {
                in_dim: h.fc1,
                out_dim: h.fc2,
                l1: 0.0,
                l2: 0.0,
            },
            BatchNormRelu { width: h.fc2 },
            RepresentationTap { width: h.fc2 },
            Dropout { rate: h.dropout },
            Dense {
                in_dim: h.fc2,
                out_dim: 2,
                l1: 0.0,
                l2: 0.0,
            },
            Softmax,
        ],
        ModelHyper::Sender(h) => vec![
            Embedding {
                input: "address_trigrams".into(),
                vocab_size: h.trig_vocab_size,
                dim: h.embed_dim,
            },
            ConvBlock {
                input: "address_trigrams".into(),
                windows: h.conv.window_sizes.clone(),
                filters: h.conv.filters_per_window,
            },
            Dropout { rate: h.dropout },
            Embedding {
                input: "sender_name".into(),
                vocab_size: h.name_vocab_size,
                dim: h.embed_dim,
            },
            ConvBlock {
                input: "sender_name".into(),
                windows: h.conv.window_sizes.clone(),
                filters: h.conv.filters_per_window,
            },
            Dropout { rate: h.dropout },
            Concat {
                width: h.concat_width(),
            },
            Dense {
                in_dim: h.concat_width(),
                out_dim: h.fc1,
                l1: 0.0,
                l2: h.fc1_l2,
            },
            Dense {
                in_dim: h.fc1,
                out_dim: 2,
                l1: h.out_l1,
                l2: h.out_l2,
            },
            Softmax,
        ],
        ModelHyper::Salutation(h) => vec![
            Embedding {
                input: "salutation".into(),
                vocab_size: h.vocab_size,
                dim: h.embed_dim,
            },
            ConvBlock {
                input: "salutation".into(),
                windows: h.conv.window_sizes.clone(),
                filters: h.conv.filters_per_window,
            },
            Dropout { rate: h.dropout },
            Dense {
                in_dim: h.conv.out_width(),
                out_dim: h.fc1,
                l1: 0.0,
                l2: 0.0,
            },
            Relu { width: h.fc1 },
            RepresentationTap { width: h.fc1 },
            Dense {
                in_dim: h.fc1,
                out_dim: 2,
                l1: 0.0,
                l2: 0.0,
            },
            Softmax,
        ],
        ModelHyper::Full(h) => {
            let _ = kind;
            vec![
                SubModel {
                    name: "content".into(),
                    trainable: true,
                },
                SubModel {
                    name: "sender".into(),
                    trainable: false,
                },
                SubModel {
                    name: "action".into(),
                    trainable: false,
                },
                SubModel {
                    name: "salutation".into(),
                    trainable: false,
                },
                RectifiedSignals {
                    q: h.q,
                    signals: vec![
                        "sender_p_plus".into(),
                        "sender_p_minus".into(),
                        "action_p_minus".into(),
                    ],
                },
                RepresentationTap {
                    width: h.content.fc2,
                },
                RepresentationTap {
                    width: h.salutation.fc1,
                },
                Concat {
                    width: h.fused_width(),
                },
                Dropout {
                    rate: h.content.dropout,
                },
                Dense {
                    in_dim: h.fused_width(),
                    out_dim: 2,
                    l1: 0.0,
                    l2: 0.0,
                },
                Softmax,
            ]
        }
    }
}
