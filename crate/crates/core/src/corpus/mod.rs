//! Message corpus: record type, line-delimited file format, dedup/volume-cap
//! sampling, and a synthetic corpus generator.
//!
//! A corpus file holds one JSON record per line (UTF-8). Malformed lines are
//! counted and reported; reading aborts when they exceed a configurable rate.

mod dedup;
mod synth;

pub use dedup::dedup_and_cap;
pub use synth::{generate_corpus, SynthSpec};

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Editorial judgement of a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldLabel {
    Human,
    Machine,
    Unknown,
}

/// One message with its behavioral flags and optional gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmailRecord {
    pub message_id: String,
    pub sender_address: String,
    pub sender_name: String,
    pub subject: String,
    pub body: String,
    pub recipient_names: Vec<String>,
    pub opened: bool,
    pub deleted: bool,
    pub day: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<GoldLabel>,
}

/// Fraction of malformed lines above which reading a corpus aborts.
pub const DEFAULT_MAX_MALFORMED_RATE: f64 = 0.01;

/// Result of reading a corpus file.
pub struct CorpusFile {
    pub records: Vec<EmailRecord>,
    pub malformed_lines: usize,
}

/// Reads a line-delimited corpus. Malformed lines are counted, logged, and
/// tolerated up to `max_malformed_rate` of all non-empty lines; beyond that
/// the read fails. Duplicate message ids are a data error.
pub fn read_corpus(path: &Path, max_malformed_rate: f64) -> Result<CorpusFile> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    let mut malformed = 0usize;
    let mut total = 0usize;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match serde_json::from_str::<EmailRecord>(&line) {
            Ok(rec) => records.push(rec),
            Err(e) => {
                malformed += 1;
                log::warn!("{}: line {}: malformed record: {e}", path.display(), lineno + 1);
            }
        }
    }
    if total > 0 && malformed as f64 / total as f64 > max_malformed_rate {
        return Err(Error::Data(format!(
            "{}: {malformed} of {total} lines malformed (limit {:.2}%)",
            path.display(),
            max_malformed_rate * 100.0
        )));
    }
    let mut ids: Vec<&str> = records.iter().map(|r| r.message_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(dup) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!(
            "{}: duplicate message_id `{}`",
            path.display(),
            dup[0]
        )));
    }
    Ok(CorpusFile {
        records,
        malformed_lines: malformed,
    })
}

/// Writes records one JSON object per line, in the given order.
pub fn write_corpus(path: &Path, records: &[EmailRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        let line = serde_json::to_string(rec).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[doc(hidden)]
pub mod test_support {
    use super::*;

    /// Minimal record for label-logic tests.
    pub fn record(id: &str, sender: &str, opened: bool, deleted: bool) -> EmailRecord {
        EmailRecord {
            message_id: id.to_string(),
            sender_address: sender.to_string(),
            sender_name: String::new(),
            subject: String::new(),
            body: String::new(),
            recipient_names: Vec::new(),
            opened,
            deleted,
            day: NaiveDate::from_ymd_opt(2021, 6, 1).unwrap(),
            gold_label: None,
        }
    }
}
