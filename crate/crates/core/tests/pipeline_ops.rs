//! Pipeline operation contracts: training-set assembly rules, empty-set
//! errors, vocabulary construction wiring, and batch-prediction edges.

use std::collections::HashSet;

use chrono::NaiveDate;
use mailclass_core::config::Config;
use mailclass_core::corpus::{dedup_and_cap, generate_corpus, EmailRecord, GoldLabel, SynthSpec};
use mailclass_core::pipeline::{assemble_training_sets, build_vocabularies};

fn labeled(id: &str, sender: &str, gold: GoldLabel, opened: bool, deleted: bool, day: u32) -> EmailRecord {
    let mut r = mailclass_core::corpus::test_support::record(id, sender, opened, deleted);
    r.gold_label = Some(gold);
    r.day = NaiveDate::from_ymd_opt(2021, 6, day).unwrap();
    r.subject = format!("subject {id}");
    r.body = "hello there friend".into();
    r.sender_name = "Some Sender".into();
    r
}

fn small_corpus() -> Vec<EmailRecord> {
    let mut corpus = Vec::new();
    for i in 0..30 {
        let human = i % 3 == 0;
        let gold = if human { GoldLabel::Human } else { GoldLabel::Machine };
        let sender = if human {
            format!("person{}@home.example", i % 5)
        } else {
            format!("noreply@shop{}.example", i % 4)
        };
        // Humans open-not-delete; machines delete-not-open half the time.
        let (opened, deleted) = if human { (true, false) } else { (i % 2 == 0, i % 2 == 1) };
        corpus.push(labeled(
            &format!("m{i:02}"),
            &sender,
            gold,
            opened,
            deleted,
            1 + (i % 5) as u32,
        ));
    }
    corpus
}

#[test]
fn salutation_set_mirrors_content_set() {
    let corpus = small_corpus();
    let cfg = Config::new();
    let sets = assemble_training_sets(&corpus, &cfg, None).unwrap();
    assert_eq!(sets.salutation.len(), sets.content.len());
    let content_ids: Vec<&str> = sets.content.iter().map(|(id, _)| id.as_str()).collect();
    let sal_ids: Vec<&str> = sets.salutation.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(content_ids, sal_ids);
}

#[test]
fn unknown_gold_labels_are_excluded_from_the_content_set() {
    let mut corpus = small_corpus();
    corpus.push(labeled("mx", "x@example.com", GoldLabel::Unknown, true, false, 1));
    let cfg = Config::new();
    let sets = assemble_training_sets(&corpus, &cfg, None).unwrap();
    assert!(sets.content.iter().all(|(id, _)| id != "mx"));
}

#[test]
fn corpus_without_opened_messages_fails_with_empty_action_positives() {
    let corpus: Vec<EmailRecord> = small_corpus()
        .into_iter()
        .map(|mut r| {
            r.opened = false;
            r.deleted = true;
            r
        })
        .collect();
    let cfg = Config::new();
    let err = assemble_training_sets(&corpus, &cfg, None).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("action"), "error should name the action set: {msg}");
}

#[test]
fn sender_set_is_exactly_balanced() {
    let spec = SynthSpec {
        n_messages: 4000,
        human_fraction: 0.3,
        seed: 5,
        ..SynthSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let deduped = dedup_and_cap(&corpus, 5);
    let cfg = Config::new();
    let sets = assemble_training_sets(&deduped, &cfg, None).unwrap();
    let pos = sets.sender.iter().filter(|e| e.label == 1).count();
    let neg = sets.sender.len() - pos;
    assert_eq!(pos, neg, "sender classes must balance exactly");
    assert!(pos > 10, "sender set too small: {}", sets.sender.len());
}

#[test]
fn hard_examples_are_duplicated_by_the_configured_factor() {
    let corpus = small_corpus();
    let mut cfg = Config::new();
    cfg.set("assemble.hard_dup_factor", "10").unwrap();
    let hard: HashSet<String> = ["m00".to_string()].into_iter().collect();
    let sets = assemble_training_sets(&corpus, &cfg, Some(&hard)).unwrap();
    let dups = sets.content.iter().filter(|(id, _)| id == "m00").count();
    assert_eq!(dups, 10);
}

#[test]
fn action_window_restricts_to_recent_days() {
    // Days span 1..=5; a 3-day window keeps only days 3..=5.
    let corpus = small_corpus();
    let cfg = Config::new();
    let sets = assemble_training_sets(&corpus, &cfg, None).unwrap();
    let by_id: std::collections::HashMap<&str, &EmailRecord> =
        corpus.iter().map(|r| (r.message_id.as_str(), r)).collect();
    for (id, _) in &sets.action {
        let day = by_id[id.as_str()].day;
        assert!(day >= NaiveDate::from_ymd_opt(2021, 6, 3).unwrap(), "{id} at {day}");
    }
}

#[test]
fn vocabularies_have_reserved_indices_and_nonempty_content() {
    let spec = SynthSpec {
        n_messages: 1500,
        human_fraction: 0.3,
        seed: 6,
        ..SynthSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let cfg = Config::new();
    let vocabs = build_vocabularies(&corpus, &cfg).unwrap();
    for (vocab, probe) in [
        (&vocabs.word, "unsubscribe"),
        (&vocabs.salutation, "dear"),
    ] {
        assert!(vocab.size() > 50);
        assert!(vocab.lookup(probe) >= 2, "{probe} should be a real token");
    }
    // Trigram vocabulary holds boundary-marked windows.
    assert!(vocabs.trigram.size() > 50);
    assert_eq!(vocabs.word.lookup("zzz-not-a-token"), 1);
}

#[test]
fn predict_batch_on_empty_corpus_writes_empty_output() {
    use mailclass_core::models::build_salutation_model;
    use mailclass_core::pipeline::predict_batch;
    use mailclass_core::text::{build_vocabulary, VocabularyKind};

    let docs: Vec<Vec<String>> = (0..6).map(|i| vec![format!("w{i}")]).collect();
    let labels: Vec<Option<bool>> = (0..6).map(|i| Some(i % 2 == 0)).collect();
    let vocab = build_vocabulary(&docs, &labels, VocabularyKind::Word, 6, 0).unwrap();
    let vocabs = mailclass_core::models::VocabSet {
        word: vocab.clone(),
        trigram: vocab.clone(),
        name: vocab.clone(),
        salutation: vocab.clone(),
    };
    let seq = mailclass_core::text::SequenceSpec {
        subject: 4,
        content_train: 8,
        content_infer: 10,
        address: 8,
        name: 3,
        salutation: 5,
    };
    let graph = build_salutation_model(&vocabs.salutation, &seq, 3);
    let mut cfg = Config::new();
    cfg.seq = seq;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scores.tsv");
    let throughput = predict_batch(&graph, &[], &vocabs, &cfg, &out, 1).unwrap();
    assert_eq!(throughput.messages, 0);
    assert_eq!(throughput.messages_per_second, 0.0);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
}
