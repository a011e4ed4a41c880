//! Weak label generation from behavioral signals.
//!
//! Two generators produce message-level training labels without any human
//! annotation:
//!
//! - action labels: messages that were deleted and not opened are negatives;
//!   messages that were opened and not deleted are positives, unless their
//!   sender also has a deleted-and-not-opened message anywhere in the corpus
//!   (the A \ B filter);
//! - salutation labels: a message is positive when a recipient name appears
//!   in the beginning of its body.
//!
//! Both generators are pure functions of the corpus: output is sorted by
//! message id and independent of record order.

use std::collections::{BTreeMap, HashSet};

use crate::corpus::{EmailRecord, GoldLabel};
use crate::text::tokenize_words;

/// The behavioral message sets: A = opened and not deleted, B = deleted and
/// not opened, plus the senders appearing in B.
#[derive(Debug, Default)]
pub struct ActionSets {
    pub set_a: HashSet<String>,
    pub set_b: HashSet<String>,
    pub senders_b: HashSet<String>,
}

impl ActionSets {
    pub fn build(corpus: &[EmailRecord]) -> Self {
        let mut sets = ActionSets::default();
        for rec in corpus {
            match (rec.opened, rec.deleted) {
                (true, false) => {
                    sets.set_a.insert(rec.message_id.clone());
                }
                (false, true) => {
                    sets.set_b.insert(rec.message_id.clone());
                    sets.senders_b.insert(rec.sender_address.clone());
                }
                // Opened-and-deleted and untouched messages satisfy neither
                // predicate and stay out of both sets.
                _ => {}
            }
        }
        sets
    }
}

/// Action-based weak labels: 0 for every message in B, 1 for every message in
/// A whose sender does not appear in B. All other messages are excluded.
/// Output is sorted by message id.
pub fn build_action_labels(corpus: &[EmailRecord]) -> Vec<(String, u8)> {
    let sets = ActionSets::build(corpus);
    let mut out: Vec<(String, u8)> = Vec::new();
    for rec in corpus {
        if sets.set_b.contains(&rec.message_id) {
            out.push((rec.message_id.clone(), 0));
        } else if sets.set_a.contains(&rec.message_id)
            && !sets.senders_b.contains(&rec.sender_address)
        {
            out.push((rec.message_id.clone(), 1));
        }
    }
    out.sort();
    out
}

/// The beginning segment of a body: the words before the first comma, or the
/// first 7 words if there is no comma.
pub fn beginning_segment(body: &str) -> Vec<String> {
    match body.find(',') {
        Some(pos) => tokenize_words(&body[..pos]),
        None => {
            let mut words = tokenize_words(body);
            words.truncate(7);
            words
        }
    }
}

/// True when any recipient-name token appears among the tokens of the body's
/// beginning segment. Matching is token-level, case-insensitive, and any
/// single name token (first or last name) counts.
pub fn detect_salutation(body: &str, recipient_names: &[String]) -> bool {
    if body.is_empty() || recipient_names.is_empty() {
        return false;
    }
    let segment = beginning_segment(body);
    if segment.is_empty() {
        return false;
    }
    let segment: HashSet<&str> = segment.iter().map(|s| s.as_str()).collect();
    recipient_names
        .iter()
        .flat_map(|name| tokenize_words(name))
        .any(|tok| segment.contains(tok.as_str()))
}

/// Salutation weak labels over the whole corpus, sorted by message id.
pub fn build_salutation_labels(corpus: &[EmailRecord]) -> Vec<(String, u8)> {
    let mut out: Vec<(String, u8)> = corpus
        .iter()
        .map(|rec| {
            (
                rec.message_id.clone(),
                u8::from(detect_salutation(&rec.body, &rec.recipient_names)),
            )
        })
        .collect();
    out.sort();
    out
}

/// Tokens of the salutation model's input: the beginning segment of the body.
/// Encoding to the fixed salutation length happens at the model boundary.
pub fn salutation_input(body: &str) -> Vec<String> {
    beginning_segment(body)
}

/// H/M/U percentages for one sampling condition; `None` when the condition
/// selects no messages.
pub type ConditionPercentages = Option<[f64; 3]>;

/// Class-share report for the conditions {random, A, B, A\B}.
#[derive(Debug)]
pub struct SelectivityReport {
    pub random: ConditionPercentages,
    pub a: ConditionPercentages,
    pub b: ConditionPercentages,
    pub a_minus_b: ConditionPercentages,
}

impl SelectivityReport {
    /// Human-share ordering sanity: A\B > A > random > B, when all defined.
    pub fn human_share_ordering_holds(&self) -> bool {
        match (self.a_minus_b, self.a, self.random, self.b) {
            (Some(ab), Some(a), Some(r), Some(b)) => ab[0] > a[0] && a[0] > r[0] && r[0] > b[0],
            _ => false,
        }
    }
}

/// Computes the gold-label composition (human/machine/unknown percentages) of
/// each behavioral condition. "random" is the whole corpus at message level.
pub fn selectivity_report(corpus: &[EmailRecord]) -> SelectivityReport {
    let sets = ActionSets::build(corpus);
    let mut random = [0u64; 3];
    let mut a = [0u64; 3];
    let mut b = [0u64; 3];
    let mut ab = [0u64; 3];
    for rec in corpus {
        let slot = match rec.gold_label {
            Some(GoldLabel::Human) => 0,
            Some(GoldLabel::Machine) => 1,
            Some(GoldLabel::Unknown) | None => 2,
        };
        random[slot] += 1;
        if sets.set_a.contains(&rec.message_id) {
            a[slot] += 1;
            if !sets.senders_b.contains(&rec.sender_address) {
                ab[slot] += 1;
            }
        }
        if sets.set_b.contains(&rec.message_id) {
            b[slot] += 1;
        }
    }
    SelectivityReport {
        random: percentages(&random),
        a: percentages(&a),
        b: percentages(&b),
        a_minus_b: percentages(&ab),
    }
}

fn percentages(counts: &[u64; 3]) -> ConditionPercentages {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    Some([
        100.0 * counts[0] as f64 / total as f64,
        100.0 * counts[1] as f64 / total as f64,
        100.0 * counts[2] as f64 / total as f64,
    ])
}

/// Writes labels as `message_id<TAB>label` lines.
pub fn write_labels(path: &std::path::Path, labels: &[(String, u8)]) -> crate::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, label) in labels {
        writeln!(out, "{id}\t{label}")?;
    }
    Ok(())
}

/// Reads labels written by [`write_labels`] into an id-sorted map.
pub fn read_labels(path: &std::path::Path) -> crate::Result<BTreeMap<String, u8>> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)?;
    let mut out = BTreeMap::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let (id, label) = line.split_once('\t').ok_or_else(|| {
            crate::Error::Data(format!("{}: line {}: missing tab", path.display(), lineno + 1))
        })?;
        let label: u8 = label.parse().map_err(|_| {
            crate::Error::Data(format!("{}: line {}: bad label", path.display(), lineno + 1))
        })?;
        out.insert(id.to_string(), label);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::record;

    #[test]
    fn opened_not_deleted_with_clean_sender_is_positive() {
        let corpus = vec![record("m1", "alice@example.com", true, false)];
        assert_eq!(build_action_labels(&corpus), vec![("m1".into(), 1)]);
    }

    #[test]
    fn deleted_not_opened_is_negative() {
        let corpus = vec![record("m1", "deals@shop.example", false, true)];
        assert_eq!(build_action_labels(&corpus), vec![("m1".into(), 0)]);
    }

    #[test]
    fn opened_and_deleted_is_excluded() {
        let corpus = vec![record("m1", "x@example.com", true, true)];
        assert!(build_action_labels(&corpus).is_empty());
    }

    #[test]
    fn sender_appearing_in_b_poisons_its_a_messages() {
        let corpus = vec![
            record("m1", "bulk@shop.example", true, false),
            record("m2", "bulk@shop.example", false, true),
            record("m3", "friend@example.com", true, false),
        ];
        let labels = build_action_labels(&corpus);
        assert_eq!(labels, vec![("m2".into(), 0), ("m3".into(), 1)]);
    }

    #[test]
    fn empty_corpus_gives_empty_output() {
        assert!(build_action_labels(&[]).is_empty());
    }

    #[test]
    fn action_sets_are_disjoint_by_construction() {
        let corpus: Vec<_> = (0..32)
            .map(|i| {
                record(
                    &format!("m{i}"),
                    &format!("s{}@example.com", i % 7),
                    i % 3 == 0,
                    i % 4 == 0,
                )
            })
            .collect();
        let sets = ActionSets::build(&corpus);
        assert!(sets.set_a.is_disjoint(&sets.set_b));
    }

    #[test]
    fn salutation_matches_dear_first_name() {
        assert!(detect_salutation(
            "Dear John, please find attached the notes.",
            &["John Smith".into()]
        ));
    }

    #[test]
    fn no_match_within_first_seven_words_without_comma() {
        assert!(!detect_salutation(
            "Unsubscribe from this newsletter anytime you want here",
            &["John".into()]
        ));
    }

    #[test]
    fn match_within_first_seven_words_without_comma() {
        assert!(detect_salutation(
            "John here is the file we discussed yesterday ok",
            &["John".into()]
        ));
    }

    #[test]
    fn empty_body_or_names_never_match() {
        assert!(!detect_salutation("", &["John".into()]));
        assert!(!detect_salutation("Dear John,", &[]));
    }

    #[test]
    fn matching_is_case_insensitive_both_ways() {
        assert!(detect_salutation("hi MARIA, quick question", &["maria lopez".into()]));
        assert!(detect_salutation("Hi maria, quick question", &["MARIA".into()]));
    }

    #[test]
    fn last_name_token_also_matches() {
        assert!(detect_salutation("Dear Smith, hello", &["John Smith".into()]));
    }

    #[test]
    fn beginning_segment_prefers_text_before_first_comma() {
        assert_eq!(beginning_segment("Hi Maria, quick question"), ["hi", "maria"]);
        assert_eq!(
            beginning_segment("one two three four five six seven eight nine"),
            ["one", "two", "three", "four", "five", "six", "seven"]
        );
        assert!(beginning_segment("").is_empty());
    }

    #[test]
    fn salutation_labels_cover_all_records_sorted() {
        let mut a = record("m2", "x@example.com", true, false);
        a.body = "Dear Ana, hi".into();
        a.recipient_names = vec!["Ana Diaz".into()];
        let b = record("m1", "y@example.com", false, false);
        let labels = build_salutation_labels(&[a, b]);
        assert_eq!(labels, vec![("m1".into(), 0), ("m2".into(), 1)]);
    }

    #[test]
    fn generators_are_order_independent() {
        let mut corpus: Vec<_> = (0..64)
            .map(|i| {
                let mut r = record(
                    &format!("m{i:03}"),
                    &format!("s{}@example.com", i % 9),
                    i % 2 == 0,
                    i % 5 == 0,
                );
                r.body = if i % 3 == 0 {
                    "Dear Pat, news".into()
                } else {
                    "no greeting here at all in this text".into()
                };
                r.recipient_names = vec!["Pat Lee".into()];
                r
            })
            .collect();
        let action_before = build_action_labels(&corpus);
        let sal_before = build_salutation_labels(&corpus);
        corpus.reverse();
        corpus.swap(0, 30);
        assert_eq!(build_action_labels(&corpus), action_before);
        assert_eq!(build_salutation_labels(&corpus), sal_before);
    }

    #[test]
    fn planted_corpus_selectivity_approaches_pure_split() {
        // Humans always opened-not-deleted, machines always deleted-not-opened.
        let mut corpus = Vec::new();
        for i in 0..50 {
            let mut r = record(&format!("h{i}"), &format!("p{i}@example.com"), true, false);
            r.gold_label = Some(GoldLabel::Human);
            corpus.push(r);
            let mut r = record(&format!("x{i}"), &format!("b{}@shop.example", i % 5), false, true);
            r.gold_label = Some(GoldLabel::Machine);
            corpus.push(r);
        }
        let report = selectivity_report(&corpus);
        let ab = report.a_minus_b.unwrap();
        assert_eq!(ab, [100.0, 0.0, 0.0]);
        let b = report.b.unwrap();
        assert_eq!(b, [0.0, 100.0, 0.0]);
        let random = report.random.unwrap();
        assert_eq!(random, [50.0, 50.0, 0.0]);
        for cond in [report.random, report.a, report.b, report.a_minus_b] {
            let sum: f64 = cond.unwrap().iter().sum();
            assert!((sum - 100.0).abs() < 0.01);
        }
    }

    #[test]
    fn empty_condition_reports_undefined_not_zero() {
        let corpus = vec![record("m1", "a@example.com", true, false)];
        let report = selectivity_report(&corpus);
        assert!(report.b.is_none());
        assert!(report.a.is_some());
    }
}
