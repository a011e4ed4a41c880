//! End-to-end orchestration: vocabulary construction, training-set assembly,
//! training, batch inference, and adjusted evaluation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::corpus::{dedup_and_cap, EmailRecord, GoldLabel};
use crate::eval::{
    recall_at_precision, stratified_sample, write_judged_samples, JudgedSample, SamplingPlan,
    ScoredMessage,
};
use crate::labels::{build_action_labels, salutation_input, selectivity_report};
use crate::models::{
    build_action_model, build_content_model, build_full_model, build_salutation_model,
    build_sender_model, encode_for, encode_sender_example, file_sha256, load_model, save_model,
    EncodedMessage, ModelGraph, ModelKind, VocabSet,
};
use crate::nn::Mode;
use crate::text::{build_vocabulary, tokenize_words, Vocabulary, VocabularyKind};
use crate::train::{train_model, TrainReport};
use crate::{rng, Error, Result};

// ---------------------------------------------------------------------------
// Vocabulary construction
// ---------------------------------------------------------------------------

/// Builds all four vocabularies from a (deduplicated) training corpus.
///
/// - word: subject + body tokens; chi-square against gold labels;
/// - salutation: beginning-of-body tokens; chi-square against the salutation
///   weak labels;
/// - trigram and name: frequency only.
pub fn build_vocabularies(records: &[EmailRecord], cfg: &Config) -> Result<VocabSet> {
    let word_docs: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let mut toks = tokenize_words(&r.subject);
            toks.extend(tokenize_words(&r.body));
            toks
        })
        .collect();
    let gold: Vec<Option<bool>> = records
        .iter()
        .map(|r| match r.gold_label {
            Some(GoldLabel::Human) => Some(true),
            Some(GoldLabel::Machine) => Some(false),
            _ => None,
        })
        .collect();
    let word = build_vocabulary(
        &word_docs,
        &gold,
        VocabularyKind::Word,
        cfg.vocab.word_n_freq,
        cfg.vocab.word_n_chi,
    )?;

    let sal_docs: Vec<Vec<String>> = records.iter().map(|r| salutation_input(&r.body)).collect();
    let sal_labels: Vec<Option<bool>> = records
        .iter()
        .map(|r| Some(crate::labels::detect_salutation(&r.body, &r.recipient_names)))
        .collect();
    let salutation = build_vocabulary(
        &sal_docs,
        &sal_labels,
        VocabularyKind::Word,
        cfg.vocab.salutation_n_freq,
        cfg.vocab.salutation_n_chi,
    )?;

    let trig_docs: Vec<Vec<String>> = records
        .iter()
        .map(|r| crate::text::letter_trigrams(&r.sender_address, cfg.seq.address))
        .collect();
    let no_labels: Vec<Option<bool>> = vec![None; records.len()];
    let trigram = build_vocabulary(
        &trig_docs,
        &no_labels,
        VocabularyKind::Trigram,
        cfg.vocab.trigram_n_freq,
        0,
    )?;

    let name_docs: Vec<Vec<String>> = records
        .iter()
        .map(|r| tokenize_words(&r.sender_name))
        .collect();
    let name = build_vocabulary(
        &name_docs,
        &no_labels,
        VocabularyKind::Word,
        cfg.vocab.name_n_freq,
        0,
    )?;

    Ok(VocabSet {
        word,
        trigram,
        name,
        salutation,
    })
}

const VOCAB_FILES: [(&str, fn(&VocabSet) -> &Vocabulary); 4] = [
    ("vocab_word.tsv", |v| &v.word),
    ("vocab_trigram.tsv", |v| &v.trigram),
    ("vocab_name.tsv", |v| &v.name),
    ("vocab_salutation.tsv", |v| &v.salutation),
];

pub fn save_vocab_set(vocabs: &VocabSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (file, get) in VOCAB_FILES {
        get(vocabs).save(&dir.join(file))?;
    }
    Ok(())
}

pub fn load_vocab_set(dir: &Path) -> Result<VocabSet> {
    Ok(VocabSet {
        word: Vocabulary::load(&dir.join("vocab_word.tsv"))?,
        trigram: Vocabulary::load(&dir.join("vocab_trigram.tsv"))?,
        name: Vocabulary::load(&dir.join("vocab_name.tsv"))?,
        salutation: Vocabulary::load(&dir.join("vocab_salutation.tsv"))?,
    })
}

// ---------------------------------------------------------------------------
// Training sets
// ---------------------------------------------------------------------------

/// One sender-level training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenderExample {
    pub address: String,
    pub name: String,
    pub label: u8,
}

/// The four assembled training sets, as (message_id, label) pairs except for
/// the sender set, which is sender-level.
#[derive(Debug, Clone)]
pub struct TrainingSets {
    pub content: Vec<(String, u8)>,
    pub action: Vec<(String, u8)>,
    pub salutation: Vec<(String, u8)>,
    pub sender: Vec<SenderExample>,
}

/// Assembles the training sets from a deduplicated corpus.
///
/// - content: every gold-labeled (human/machine) message;
/// - action: behavioral labels from the most recent `action_window_days`;
/// - salutation: the content set's messages, re-labeled by salutation
///   detection;
/// - sender: one example per sender with a gold majority label, classes
///   balanced exactly by seeded downsampling.
///
/// `hard_ids` lists messages to duplicate `hard_dup_factor` times in the
/// content set. Any empty output set is a hard error naming the set.
pub fn assemble_training_sets(
    records: &[EmailRecord],
    cfg: &Config,
    hard_ids: Option<&HashSet<String>>,
) -> Result<TrainingSets> {
    let mut content: Vec<(String, u8)> = Vec::new();
    let mut salutation: Vec<(String, u8)> = Vec::new();
    for r in records {
        let label = match r.gold_label {
            Some(GoldLabel::Human) => 1u8,
            Some(GoldLabel::Machine) => 0u8,
            _ => continue,
        };
        let dups = match hard_ids {
            Some(ids) if ids.contains(&r.message_id) => cfg.assemble.hard_dup_factor,
            _ => 1,
        };
        let sal_label = u8::from(crate::labels::detect_salutation(&r.body, &r.recipient_names));
        for _ in 0..dups {
            content.push((r.message_id.clone(), label));
            salutation.push((r.message_id.clone(), sal_label));
        }
    }
    if content.is_empty() {
        return Err(Error::EmptyTrainingSet("content".into()));
    }

    // Action set: most recent window of corpus time.
    let max_day = records.iter().map(|r| r.day).max().expect("nonempty corpus");
    let window_start = max_day - chrono::Days::new(u64::from(cfg.assemble.action_window_days) - 1);
    let windowed: Vec<EmailRecord> = records
        .iter()
        .filter(|r| r.day >= window_start)
        .cloned()
        .collect();
    let action = build_action_labels(&windowed);
    if !action.iter().any(|(_, l)| *l == 1) {
        return Err(Error::EmptyTrainingSet("action (no positives)".into()));
    }
    if !action.iter().any(|(_, l)| *l == 0) {
        return Err(Error::EmptyTrainingSet("action (no negatives)".into()));
    }

    // Sender set: majority gold label per sender, then exact class balance.
    let mut by_sender: BTreeMap<&str, (i64, &str)> = BTreeMap::new();
    for r in records {
        let vote = match r.gold_label {
            Some(GoldLabel::Human) => 1,
            Some(GoldLabel::Machine) => -1,
            _ => continue,
        };
        let entry = by_sender
            .entry(r.sender_address.as_str())
            .or_insert((0, r.sender_name.as_str()));
        entry.0 += vote;
    }
    let mut positives: Vec<SenderExample> = Vec::new();
    let mut negatives: Vec<SenderExample> = Vec::new();
    for (address, (votes, name)) in by_sender {
        if votes == 0 {
            continue;
        }
        let ex = SenderExample {
            address: address.to_string(),
            name: name.to_string(),
            label: u8::from(votes > 0),
        };
        if votes > 0 {
            positives.push(ex);
        } else {
            negatives.push(ex);
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::EmptyTrainingSet("sender".into()));
    }
    let n = positives.len().min(negatives.len());
    let mut balance_rng = rng::stream(cfg.seed, "sender-balance");
    positives.shuffle(&mut balance_rng);
    negatives.shuffle(&mut balance_rng);
    positives.truncate(n);
    negatives.truncate(n);
    let mut sender: Vec<SenderExample> = positives;
    sender.append(&mut negatives);
    sender.sort_by(|a, b| a.address.cmp(&b.address));

    Ok(TrainingSets {
        content,
        action,
        salutation,
        sender,
    })
}

pub fn write_training_sets(sets: &TrainingSets, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::labels::write_labels(&dir.join("content_set.tsv"), &sets.content)?;
    crate::labels::write_labels(&dir.join("action_set.tsv"), &sets.action)?;
    crate::labels::write_labels(&dir.join("salutation_set.tsv"), &sets.salutation)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("sender_set.jsonl"))?);
    for ex in &sets.sender {
        writeln!(
            out,
            "{}",
            serde_json::to_string(ex).map_err(|e| Error::Data(e.to_string()))?
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training orchestration
// ---------------------------------------------------------------------------

/// Per-model training outcome.
pub struct ModelSummary {
    pub kind: ModelKind,
    pub path: PathBuf,
    pub report: TrainReport,
    pub train_accuracy: f64,
}

pub struct TrainSummary {
    pub models: Vec<ModelSummary>,
    pub vocab_dir: PathBuf,
}

fn encode_set(
    kind: ModelKind,
    set: &[(String, u8)],
    by_id: &HashMap<&str, &EmailRecord>,
    vocabs: &VocabSet,
    cfg: &Config,
) -> Result<Vec<(EncodedMessage, u8)>> {
    let pairs: Vec<(&EmailRecord, u8)> = set
        .iter()
        .map(|(id, label)| {
            by_id
                .get(id.as_str())
                .map(|r| (*r, *label))
                .ok_or_else(|| Error::Data(format!("label references unknown message `{id}`")))
        })
        .collect::<Result<_>>()?;
    Ok(crate::par::map_collect(&pairs, |(rec, label)| {
        (encode_for(kind, rec, vocabs, &cfg.seq, Mode::Train), *label)
    }))
}

/// Trains the four sub-models and the full model, saving checkpoints and
/// vocabularies under `out_dir`. On numeric divergence the last finite state
/// is saved to `<model>.diverged.ckpt` before the error propagates.
pub fn train_all(corpus: &[EmailRecord], cfg: &Config, out_dir: &Path) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir)?;
    let deduped = dedup_and_cap(corpus, cfg.assemble.per_day_cap);
    log::info!(
        "training corpus: {} records ({} after dedup/cap)",
        corpus.len(),
        deduped.len()
    );
    let vocabs = build_vocabularies(&deduped, cfg)?;
    let vocab_dir = out_dir.join("vocabs");
    save_vocab_set(&vocabs, &vocab_dir)?;

    let sets = assemble_training_sets(&deduped, cfg, None)?;
    write_training_sets(&sets, out_dir)?;
    let by_id: HashMap<&str, &EmailRecord> = deduped
        .iter()
        .map(|r| (r.message_id.as_str(), r))
        .collect();

    let mut summaries = Vec::new();
    let train_one = |graph: &mut ModelGraph,
                     examples: Vec<(EncodedMessage, u8)>,
                     epochs: usize|
     -> Result<ModelSummary> {
        let kind = graph.kind;
        let tc = cfg
            .train
            .to_train_config(epochs, rng::derive_seed(cfg.seed, &format!("train-{kind}")));
        let path = out_dir.join(format!("{kind}.ckpt"));
        let report = match train_model(graph, &examples, &tc) {
            Ok(report) => report,
            Err(e @ Error::NumericDivergence(_)) => {
                let diverged = out_dir.join(format!("{kind}.diverged.ckpt"));
                save_model(graph, &diverged)?;
                log::error!("{kind}: diverged; last finite state saved to {}", diverged.display());
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let acc_cap = examples.len().min(1024);
        let train_accuracy = crate::train::accuracy(graph, &examples[..acc_cap])?;
        save_model(graph, &path)?;
        log::info!(
            "{kind}: best val loss {:.5} (epoch {}), train accuracy {:.3}, saved {}",
            report.best_val_loss,
            report.best_epoch,
            train_accuracy,
            path.display()
        );
        Ok(ModelSummary {
            kind,
            path,
            report,
            train_accuracy,
        })
    };

    let seed = cfg.seed;
    let mut content = build_content_model(&vocabs.word, &cfg.seq, seed);
    let content_examples = encode_set(ModelKind::Content, &sets.content, &by_id, &vocabs, cfg)?;
    summaries.push(train_one(&mut content, content_examples, cfg.train.epochs.content)?);

    let mut sender = build_sender_model(&vocabs.trigram, &vocabs.name, &cfg.seq, seed);
    let sender_examples: Vec<(EncodedMessage, u8)> = crate::par::map_collect(&sets.sender, |ex| {
        (
            encode_sender_example(&ex.address, &ex.name, &vocabs, &cfg.seq),
            ex.label,
        )
    });
    summaries.push(train_one(&mut sender, sender_examples, cfg.train.epochs.sender)?);

    let mut action = build_action_model(&vocabs.word, &cfg.seq, seed);
    let action_examples = encode_set(ModelKind::Action, &sets.action, &by_id, &vocabs, cfg)?;
    summaries.push(train_one(&mut action, action_examples, cfg.train.epochs.action)?);

    let mut salutation = build_salutation_model(&vocabs.salutation, &cfg.seq, seed);
    let sal_examples = encode_set(ModelKind::Salutation, &sets.salutation, &by_id, &vocabs, cfg)?;
    summaries.push(train_one(&mut salutation, sal_examples, cfg.train.epochs.salutation)?);

    // The full model fine-tunes the content trunk on the content set with
    // the other three frozen; sub-model checkpoint hashes go into its header.
    let mut full = build_full_model(&content, &sender, &action, &salutation, cfg.q, seed)?;
    for kind in [
        ModelKind::Content,
        ModelKind::Sender,
        ModelKind::Action,
        ModelKind::Salutation,
    ] {
        let path = out_dir.join(format!("{kind}.ckpt"));
        full.sub_model_hashes
            .insert(kind.to_string(), file_sha256(&path)?);
    }
    let full_examples: Vec<(EncodedMessage, u8)> = {
        let pairs: Vec<(&EmailRecord, u8)> = sets
            .content
            .iter()
            .map(|(id, label)| (by_id[id.as_str()], *label))
            .collect();
        crate::par::map_collect(&pairs, |(rec, label)| {
            (
                encode_for(ModelKind::Full, rec, &vocabs, &cfg.seq, Mode::Train),
                *label,
            )
        })
    };
    summaries.push(train_one(&mut full, full_examples, cfg.train.epochs.full)?);

    Ok(TrainSummary {
        models: summaries,
        vocab_dir,
    })
}

// ---------------------------------------------------------------------------
// Batch inference
// ---------------------------------------------------------------------------

pub struct Throughput {
    pub messages: usize,
    pub seconds: f64,
    pub messages_per_second: f64,
}

/// Scores every record with a loaded model and writes one
/// `message_id<TAB>p_human` line per input, in input order. The vocabulary
/// hashes are verified before any scoring; output bytes are independent of
/// `threads`.
pub fn predict_batch(
    graph: &ModelGraph,
    records: &[EmailRecord],
    vocabs: &VocabSet,
    cfg: &Config,
    out_path: &Path,
    threads: usize,
) -> Result<Throughput> {
    graph.verify_vocab_hashes(vocabs)?;
    let start = Instant::now();
    let scores: Vec<f64> = crate::par::run_with_threads(threads, || -> Result<Vec<f64>> {
        let msgs: Vec<EncodedMessage> = crate::par::map_collect(records, |r| {
            encode_for(graph.kind, r, vocabs, &cfg.seq, Mode::Infer)
        });
        graph.predict_probs(&msgs)
    })?;
    let seconds = start.elapsed().as_secs_f64();
    let mut out = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    for (r, s) in records.iter().zip(&scores) {
        writeln!(out, "{}\t{}", r.message_id, s)?;
    }
    Ok(Throughput {
        messages: records.len(),
        seconds,
        messages_per_second: if seconds > 0.0 {
            records.len() as f64 / seconds
        } else {
            0.0
        },
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Deterministically ordered key/value report.
pub struct MetricsReport {
    pub lines: Vec<(String, String)>,
}

impl MetricsReport {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    crate::eval::fmt_f64(v)
}

/// Scores the gold-labeled population with the sampling model ψ_s and the
/// final model ψ_f, draws the stratified judged sample, and sweeps adjusted
/// recall at each precision target. Gold labels play the editor's role.
pub fn evaluate(
    model_s: &ModelGraph,
    model_f: &ModelGraph,
    records: &[EmailRecord],
    vocabs: &VocabSet,
    cfg: &Config,
    judged_out: Option<&Path>,
) -> Result<MetricsReport> {
    model_s.verify_vocab_hashes(vocabs)?;
    model_f.verify_vocab_hashes(vocabs)?;

    let judged_pop: Vec<&EmailRecord> = records
        .iter()
        .filter(|r| matches!(r.gold_label, Some(GoldLabel::Human) | Some(GoldLabel::Machine)))
        .collect();
    if judged_pop.is_empty() {
        return Err(Error::Data("no gold-labeled records to evaluate on".into()));
    }

    let score_with = |g: &ModelGraph| -> Result<Vec<f64>> {
        let msgs: Vec<EncodedMessage> = crate::par::map_collect(&judged_pop, |r| {
            encode_for(g.kind, r, vocabs, &cfg.seq, Mode::Infer)
        });
        g.predict_probs(&msgs)
    };
    let scores_s = score_with(model_s)?;
    let scores_f = score_with(model_f)?;

    let population: Vec<ScoredMessage> = judged_pop
        .iter()
        .zip(&scores_s)
        .map(|(r, &s)| ScoredMessage {
            message_id: r.message_id.clone(),
            score_s: s,
            gold_positive: r.gold_label == Some(GoldLabel::Human),
        })
        .collect();
    let f_by_id: HashMap<&str, f64> = judged_pop
        .iter()
        .zip(&scores_f)
        .map(|(r, &s)| (r.message_id.as_str(), s))
        .collect();

    let plan = SamplingPlan::for_population(
        &population,
        cfg.eval.cutoff,
        cfg.eval.m_plus.min(population.iter().filter(|s| s.score_s >= cfg.eval.cutoff).count()),
        cfg.eval.m_minus.min(population.iter().filter(|s| s.score_s < cfg.eval.cutoff).count()),
    )?;
    let drawn = stratified_sample(&population, &plan, rng::derive_seed(cfg.seed, "judged-sample"))?;
    let judged: Vec<JudgedSample> = drawn
        .into_iter()
        .map(|(s, group)| JudgedSample {
            score_f: f_by_id[s.message_id.as_str()],
            message_id: s.message_id,
            score_s: s.score_s,
            gold_positive: s.gold_positive,
            group,
        })
        .collect();
    if let Some(path) = judged_out {
        write_judged_samples(path, &judged)?;
    }

    let beta = plan.beta();
    let mut lines = vec![
        ("model_s".to_string(), model_s.kind.to_string()),
        ("model_f".to_string(), model_f.kind.to_string()),
        ("population".to_string(), population.len().to_string()),
        (
            "g_plus".to_string(),
            population
                .iter()
                .filter(|s| s.score_s >= plan.cutoff_s)
                .count()
                .to_string(),
        ),
        (
            "g_minus".to_string(),
            population
                .iter()
                .filter(|s| s.score_s < plan.cutoff_s)
                .count()
                .to_string(),
        ),
        ("cutoff_s".to_string(), fmt(plan.cutoff_s)),
        ("k_ratio".to_string(), fmt(plan.k_ratio)),
        ("m_s_plus".to_string(), plan.m_s_plus.to_string()),
        ("m_s_minus".to_string(), plan.m_s_minus.to_string()),
        ("beta".to_string(), fmt(beta)),
        ("judged".to_string(), judged.len().to_string()),
    ];
    for &target in &cfg.eval.targets {
        let r = recall_at_precision(&judged, beta, target)?;
        lines.push((format!("adj_r_at_p_{target}"), fmt(r.recall)));
        lines.push((
            format!("threshold_at_p_{target}"),
            r.threshold.map_or("none".to_string(), fmt),
        ));
        lines.push((
            format!("adj_p_at_p_{target}"),
            r.precision.map_or("undefined".to_string(), fmt),
        ));
    }
    Ok(MetricsReport { lines })
}

/// Corpus composition and behavioral-selectivity report.
pub fn corpus_report(records: &[EmailRecord]) -> MetricsReport {
    let mut lines = vec![("messages".to_string(), records.len().to_string())];
    let mut counts = [0u64; 3];
    for r in records {
        match r.gold_label {
            Some(GoldLabel::Human) => counts[0] += 1,
            Some(GoldLabel::Machine) => counts[1] += 1,
            _ => counts[2] += 1,
        }
    }
    lines.push(("gold_human".to_string(), counts[0].to_string()));
    lines.push(("gold_machine".to_string(), counts[1].to_string()));
    lines.push(("gold_unknown".to_string(), counts[2].to_string()));

    let report = selectivity_report(records);
    let conditions = [
        ("random", report.random),
        ("a", report.a),
        ("b", report.b),
        ("a_minus_b", report.a_minus_b),
    ];
    for (name, cond) in conditions {
        match cond {
            Some([h, m, u]) => {
                lines.push((format!("selectivity.{name}.human_pct"), format!("{h:.2}")));
                lines.push((format!("selectivity.{name}.machine_pct"), format!("{m:.2}")));
                lines.push((format!("selectivity.{name}.unknown_pct"), format!("{u:.2}")));
            }
            None => {
                lines.push((format!("selectivity.{name}.human_pct"), "undefined".into()));
                lines.push((format!("selectivity.{name}.machine_pct"), "undefined".into()));
                lines.push((format!("selectivity.{name}.unknown_pct"), "undefined".into()));
            }
        }
    }
    MetricsReport { lines }
}

/// Loads a checkpoint and verifies it against the vocabularies in `dir`.
pub fn load_model_checked(path: &Path, vocabs: &VocabSet) -> Result<ModelGraph> {
    let graph = load_model(path)?;
    graph.verify_vocab_hashes(vocabs)?;
    Ok(graph)
}
