//! Vocabulary construction, lookup, encoding, and file round-tripping.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::chi2::chi_square_from_counts;
use crate::{Error, Result};

/// Reserved index for right-padding.
pub const PAD_INDEX: u32 = 0;
/// Reserved index for out-of-vocabulary tokens.
pub const OOV_INDEX: u32 = 1;

const VOCAB_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabularyKind {
    Word,
    Trigram,
}

/// Token → index map with dense indices in `[0, size)`. Indices 0 and 1 are
/// reserved for padding and OOV and are never assigned to real tokens;
/// looking up an unknown token returns [`OOV_INDEX`], never an error.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    kind: VocabularyKind,
    token_to_index: HashMap<String, u32>,
    /// Tokens in index order, starting at index 2.
    tokens: Vec<String>,
    hash: String,
}

impl Vocabulary {
    fn from_ordered_tokens(kind: VocabularyKind, tokens: Vec<String>) -> Self {
        let mut token_to_index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            token_to_index.insert(t.clone(), i as u32 + 2);
        }
        let hash = compute_hash(kind, &tokens);
        Self {
            kind,
            token_to_index,
            tokens,
            hash,
        }
    }

    pub fn kind(&self) -> VocabularyKind {
        self.kind
    }

    /// Total size including the two reserved indices.
    pub fn size(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.token_to_index.get(token).copied().unwrap_or(OOV_INDEX)
    }

    /// Content hash; recorded in checkpoints and verified at inference load.
    pub fn content_hash(&self) -> &str {
        &self.hash
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = VocabHeader {
            kind: self.kind,
            version: VOCAB_FORMAT_VERSION,
            size: self.size(),
            hash: self.hash.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(out, "{}\t{}", escape(t), i + 2)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{}: empty vocabulary file", path.display())))??;
        let header: VocabHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::Data(format!("{}: bad vocabulary header: {e}", path.display())))?;
        if header.version != VOCAB_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported vocabulary version {}",
                path.display(),
                header.version
            )));
        }
        let mut tokens = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let (tok, idx) = line.split_once('\t').ok_or_else(|| {
                Error::Data(format!("{}: line {}: missing tab", path.display(), lineno + 2))
            })?;
            let idx: usize = idx.parse().map_err(|_| {
                Error::Data(format!("{}: line {}: bad index", path.display(), lineno + 2))
            })?;
            if idx != tokens.len() + 2 {
                return Err(Error::Data(format!(
                    "{}: line {}: index {} out of order",
                    path.display(),
                    lineno + 2,
                    idx
                )));
            }
            tokens.push(unescape(tok));
        }
        let vocab = Self::from_ordered_tokens(header.kind, tokens);
        if vocab.size() != header.size || vocab.hash != header.hash {
            return Err(Error::Data(format!(
                "{}: vocabulary content does not match its header hash",
                path.display()
            )));
        }
        Ok(vocab)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabHeader {
    kind: VocabularyKind,
    version: u32,
    size: usize,
    hash: String,
}

fn compute_hash(kind: VocabularyKind, tokens: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(match kind {
        VocabularyKind::Word => b"word\n".as_slice(),
        VocabularyKind::Trigram => b"trigram\n".as_slice(),
    });
    for (i, t) in tokens.iter().enumerate() {
        h.update(t.as_bytes());
        h.update([0u8]);
        h.update((i as u64 + 2).to_le_bytes());
    }
    let mut hex = String::with_capacity(64);
    for byte in h.finalize() {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

fn escape(t: &str) -> String {
    t.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(t: &str) -> String {
    let mut out = String::with_capacity(t.len());
    let mut chars = t.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => out.push(other),
                None => {}
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Builds a vocabulary as the union of the `n_freq` most frequent tokens and
/// the `n_chi` highest chi-square tokens, deduplicated. Indices are assigned
/// by descending corpus frequency with lexicographic tie-break, starting at 2.
///
/// `labels[i]`, when present, is the binary class of `docs[i]`; the chi-square
/// component uses only labeled documents and requires at least one document
/// per class. `n_freq + n_chi == 0` is a hard error.
pub fn build_vocabulary(
    docs: &[Vec<String>],
    labels: &[Option<bool>],
    kind: VocabularyKind,
    n_freq: usize,
    n_chi: usize,
) -> Result<Vocabulary> {
    if n_freq + n_chi == 0 {
        return Err(Error::InvalidConfig(
            "vocabulary needs n_freq + n_chi > 0".into(),
        ));
    }
    if docs.is_empty() {
        return Err(Error::Data("vocabulary corpus is empty".into()));
    }
    if docs.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} docs but {} labels",
            docs.len(),
            labels.len()
        )));
    }

    let mut freq: HashMap<&str, u64> = HashMap::new();
    for doc in docs {
        for tok in doc {
            *freq.entry(tok.as_str()).or_insert(0) += 1;
        }
    }

    let mut selected: Vec<&str> = Vec::new();
    if n_freq > 0 {
        let mut by_freq: Vec<(&str, u64)> = freq.iter().map(|(&t, &c)| (t, c)).collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        selected.extend(by_freq.iter().take(n_freq).map(|(t, _)| *t));
    }

    if n_chi > 0 {
        // Document-level presence counts per class.
        let mut n_pos = 0u64;
        let mut n_neg = 0u64;
        let mut present_pos: HashMap<&str, u64> = HashMap::new();
        let mut present_neg: HashMap<&str, u64> = HashMap::new();
        for (doc, label) in docs.iter().zip(labels) {
            let Some(label) = label else { continue };
            if *label {
                n_pos += 1;
            } else {
                n_neg += 1;
            }
            let mut seen: Vec<&str> = doc.iter().map(|s| s.as_str()).collect();
            seen.sort_unstable();
            seen.dedup();
            for tok in seen {
                if *label {
                    *present_pos.entry(tok).or_insert(0) += 1;
                } else {
                    *present_neg.entry(tok).or_insert(0) += 1;
                }
            }
        }
        if n_pos == 0 || n_neg == 0 {
            return Err(Error::Data(
                "chi-square vocabulary selection needs at least one labeled document per class"
                    .into(),
            ));
        }
        let mut by_chi: Vec<(&str, f64)> = freq
            .keys()
            .map(|&t| {
                let a = present_pos.get(t).copied().unwrap_or(0);
                let c = present_neg.get(t).copied().unwrap_or(0);
                (t, chi_square_from_counts(a, n_pos - a, c, n_neg - c))
            })
            .collect();
        by_chi.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("chi-square scores are finite")
                .then_with(|| a.0.cmp(b.0))
        });
        selected.extend(by_chi.iter().take(n_chi).map(|(t, _)| *t));
    }

    selected.sort_unstable();
    selected.dedup();
    // Final index order: descending frequency, lexicographic tie-break.
    selected.sort_by(|a, b| freq[b].cmp(&freq[a]).then_with(|| a.cmp(b)));

    Ok(Vocabulary::from_ordered_tokens(
        kind,
        selected.into_iter().map(String::from).collect(),
    ))
}

/// Maps tokens through `vocab` (unknown → OOV), truncates at `length` and
/// right-pads with index 0. The output length is always exactly `length`.
pub fn encode(tokens: &[String], vocab: &Vocabulary, length: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(length);
    for tok in tokens.iter().take(length) {
        out.push(vocab.lookup(tok));
    }
    out.resize(length, PAD_INDEX);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn small_vocab() -> Vocabulary {
        let docs = vec![
            toks(&["alpha", "beta", "alpha"]),
            toks(&["alpha", "gamma"]),
            toks(&["delta"]),
        ];
        let labels = vec![Some(true), Some(false), Some(false)];
        build_vocabulary(&docs, &labels, VocabularyKind::Word, 10, 10).unwrap()
    }

    #[test]
    fn reserved_indices_are_never_assigned() {
        let v = small_vocab();
        for t in ["alpha", "beta", "gamma", "delta"] {
            assert!(v.lookup(t) >= 2, "{t} got a reserved index");
        }
        assert_eq!(v.lookup("unknown-token"), OOV_INDEX);
    }

    #[test]
    fn indices_follow_frequency_then_lexicographic_order() {
        let v = small_vocab();
        // alpha appears 3x; beta/gamma/delta once each, tie-broken by name.
        assert_eq!(v.lookup("alpha"), 2);
        assert_eq!(v.lookup("beta"), 3);
        assert_eq!(v.lookup("delta"), 4);
        assert_eq!(v.lookup("gamma"), 5);
        assert_eq!(v.size(), 6);
    }

    #[test]
    fn fully_overlapping_top_lists_collapse_to_n_freq_plus_reserved() {
        let docs = vec![toks(&["a", "b"]), toks(&["a", "b"])];
        let labels = vec![Some(true), Some(false)];
        let v = build_vocabulary(&docs, &labels, VocabularyKind::Word, 2, 2).unwrap();
        assert_eq!(v.size(), 2 + 2);
    }

    #[test]
    fn union_matches_brute_force_set_union() {
        // Oracle: select the two top lists independently and union them.
        let docs: Vec<Vec<String>> = (0..40)
            .map(|i| {
                let mut d = vec![format!("w{}", i % 7)];
                if i % 2 == 0 {
                    d.push("even-signal".to_string());
                }
                d.push(format!("rare{i}"));
                d
            })
            .collect();
        let labels: Vec<Option<bool>> = (0..40).map(|i| Some(i % 2 == 0)).collect();
        let (n_freq, n_chi) = (5, 5);
        let v = build_vocabulary(&docs, &labels, VocabularyKind::Word, n_freq, n_chi).unwrap();

        let mut freq: HashMap<String, u64> = HashMap::new();
        for d in &docs {
            for t in d {
                *freq.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let mut by_freq: Vec<_> = freq.iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let top_freq: Vec<String> = by_freq.iter().take(n_freq).map(|(t, _)| (*t).clone()).collect();

        let labeled: Vec<super::super::chi2::LabeledDoc> = docs
            .iter()
            .zip(&labels)
            .map(|(d, l)| super::super::chi2::LabeledDoc::new(d.iter().cloned(), l.unwrap()))
            .collect();
        let mut by_chi: Vec<(String, f64)> = freq
            .keys()
            .map(|t| (t.clone(), chi_square_scores(&labeled, t)))
            .collect();
        by_chi.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let top_chi: Vec<String> = by_chi.iter().take(n_chi).map(|(t, _)| t.clone()).collect();

        let union: std::collections::HashSet<String> =
            top_freq.into_iter().chain(top_chi).collect();
        assert_eq!(v.size(), union.len() + 2);
        for t in &union {
            assert!(v.lookup(t) >= 2, "{t} missing from vocabulary");
        }
    }

    #[test]
    fn zero_budget_is_a_hard_error() {
        let docs = vec![toks(&["a"])];
        assert!(build_vocabulary(&docs, &[None], VocabularyKind::Word, 0, 0).is_err());
    }

    #[test]
    fn encode_truncates_pads_and_maps_oov() {
        let v = small_vocab();
        assert_eq!(encode(&[], &v, 5), vec![0, 0, 0, 0, 0]);
        let three = toks(&["alpha", "beta", "gamma"]);
        assert_eq!(encode(&three, &v, 2), vec![2, 3]);
        let unk = toks(&["zzz"]);
        assert_eq!(encode(&unk, &v, 3), vec![1, 0, 0]);
    }

    #[test]
    fn save_load_round_trips_bit_exactly() {
        let v = small_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.content_hash(), v.content_hash());
        assert_eq!(loaded.size(), v.size());
        assert_eq!(loaded.lookup("alpha"), v.lookup("alpha"));
        let bytes_a = std::fs::read(&path).unwrap();
        let path2 = dir.path().join("vocab2.tsv");
        loaded.save(&path2).unwrap();
        assert_eq!(bytes_a, std::fs::read(&path2).unwrap());
    }

    use super::super::chi2::chi_square_scores;
}
