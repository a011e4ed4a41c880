//! Oversampling-adjusted precision/recall and threshold-sweep evaluation.
//!
//! Test samples are drawn by stratifying on a sampling model ψ_s: the
//! population is split at a score cutoff into groups G+ and G−, fixed counts
//! are sampled from each, and every judged sample from G− is weighted by
//! β = (M_s+ / M_s−) · (|G−| / |G+|) when computing metrics for a final model
//! ψ_f. With β = 1 (proportional sampling) the adjusted metrics equal the
//! pooled unadjusted ones; sampling the whole population reproduces
//! population metrics exactly.

mod sample;
mod simulator;

pub use sample::{stratified_sample, Group, JudgedSample, SamplingPlan, ScoredMessage};
pub use simulator::{population_confusion, population_metrics, OperatingPoint, PopRecord, SimulatorSpec};

use std::io::{BufRead, Write};
use std::path::Path;

use crate::{par, Error, Result};

/// The eight stratified counts: editor-positive/negative × ψ_s-group ×
/// ψ_f-prediction, plus the β weight for the ψ_s-negative strata.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedConfusion {
    pub p_sp_fp: u64,
    pub p_sp_fn: u64,
    pub p_sn_fp: u64,
    pub p_sn_fn: u64,
    pub n_sp_fp: u64,
    pub n_sp_fn: u64,
    pub n_sn_fp: u64,
    pub n_sn_fn: u64,
    pub beta: f64,
}

impl AdjustedConfusion {
    /// Tallies judged samples at a decision threshold for ψ_f
    /// (predicted positive when `score_f >= threshold`).
    pub fn from_samples(samples: &[JudgedSample], threshold: f64, beta: f64) -> Self {
        let mut c = Self {
            p_sp_fp: 0,
            p_sp_fn: 0,
            p_sn_fp: 0,
            p_sn_fn: 0,
            n_sp_fp: 0,
            n_sp_fn: 0,
            n_sn_fp: 0,
            n_sn_fn: 0,
            beta,
        };
        for s in samples {
            let fp = s.score_f >= threshold;
            match (s.gold_positive, s.group, fp) {
                (true, Group::SPlus, true) => c.p_sp_fp += 1,
                (true, Group::SPlus, false) => c.p_sp_fn += 1,
                (true, Group::SMinus, true) => c.p_sn_fp += 1,
                (true, Group::SMinus, false) => c.p_sn_fn += 1,
                (false, Group::SPlus, true) => c.n_sp_fp += 1,
                (false, Group::SPlus, false) => c.n_sp_fn += 1,
                (false, Group::SMinus, true) => c.n_sn_fp += 1,
                (false, Group::SMinus, false) => c.n_sn_fn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.p_sp_fp
            + self.p_sp_fn
            + self.p_sn_fp
            + self.p_sn_fn
            + self.n_sp_fp
            + self.n_sp_fn
            + self.n_sn_fp
            + self.n_sn_fn
    }

    fn weighted_true_positives(&self) -> f64 {
        self.p_sp_fp as f64 + self.beta * self.p_sn_fp as f64
    }
}

/// Adjusted precision and recall; `None` marks an undefined metric (zero
/// denominator), never silently 0 or 1.
pub fn adjusted_metrics(c: &AdjustedConfusion) -> (Option<f64>, Option<f64>) {
    let tp = c.weighted_true_positives();
    let predicted_pos = tp + c.n_sp_fp as f64 + c.beta * c.n_sn_fp as f64;
    let actual_pos = tp + c.p_sp_fn as f64 + c.beta * c.p_sn_fn as f64;
    let precision = if predicted_pos > 0.0 { Some(tp / predicted_pos) } else { None };
    let recall = if actual_pos > 0.0 { Some(tp / actual_pos) } else { None };
    (precision, recall)
}

/// Result of a recall-at-precision sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallAtPrecision {
    pub recall: f64,
    /// The qualifying threshold, or `None` when no threshold reaches the
    /// precision target (recall is then 0).
    pub threshold: Option<f64>,
    /// Adjusted precision at the returned threshold.
    pub precision: Option<f64>,
}

/// Sweeps the ψ_f decision threshold over every distinct judged score
/// (descending) and returns the maximum adjusted recall among thresholds
/// whose adjusted precision meets `target_precision`.
pub fn recall_at_precision(
    samples: &[JudgedSample],
    beta: f64,
    target_precision: f64,
) -> Result<RecallAtPrecision> {
    if !samples.iter().any(|s| s.gold_positive) {
        return Err(Error::Data(
            "recall_at_precision needs at least one positive judged sample".into(),
        ));
    }
    let mut thresholds: Vec<f64> = samples.iter().map(|s| s.score_f).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    thresholds.dedup();

    // Weighted actual-positive mass is threshold-independent.
    let actual_pos: f64 = samples
        .iter()
        .filter(|s| s.gold_positive)
        .map(|s| match s.group {
            Group::SPlus => 1.0,
            Group::SMinus => beta,
        })
        .sum();

    // Evaluate thresholds independently; the reduction below is in fixed
    // (descending-threshold) order.
    let evaluated: Vec<(f64, Option<f64>, f64)> = par::map_collect(&thresholds, |&t| {
        let c = AdjustedConfusion::from_samples(samples, t, beta);
        let (precision, _) = adjusted_metrics(&c);
        let recall = c.weighted_true_positives() / actual_pos;
        (t, precision, recall)
    });

    let mut best: Option<(f64, f64, f64)> = None; // (recall, threshold, precision)
    for (t, precision, recall) in evaluated {
        let Some(p) = precision else { continue };
        if p >= target_precision && best.map_or(true, |(r, _, _)| recall > r) {
            best = Some((recall, t, p));
        }
    }
    Ok(match best {
        Some((recall, threshold, precision)) => RecallAtPrecision {
            recall,
            threshold: Some(threshold),
            precision: Some(precision),
        },
        None => RecallAtPrecision {
            recall: 0.0,
            threshold: None,
            precision: None,
        },
    })
}

/// One judged-sample line: `message_id  score_s  score_f  gold  group`.
pub fn write_judged_samples(path: &Path, samples: &[JudgedSample]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "#message_id\tscore_s\tscore_f\tgold\tgroup")?;
    for s in samples {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            s.message_id,
            fmt_f64(s.score_s),
            fmt_f64(s.score_f),
            if s.gold_positive { 1 } else { 0 },
            match s.group {
                Group::SPlus => "s+",
                Group::SMinus => "s-",
            }
        )?;
    }
    Ok(())
}

pub fn read_judged_samples(path: &Path) -> Result<Vec<JudgedSample>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!(
                "{}: line {}: expected 5 fields",
                path.display(),
                lineno + 1
            )));
        }
        let parse_err =
            |what: &str| Error::Data(format!("{}: line {}: bad {what}", path.display(), lineno + 1));
        out.push(JudgedSample {
            message_id: fields[0].to_string(),
            score_s: fields[1].parse().map_err(|_| parse_err("score_s"))?,
            score_f: fields[2].parse().map_err(|_| parse_err("score_f"))?,
            gold_positive: fields[3] == "1",
            group: match fields[4] {
                "s+" => Group::SPlus,
                "s-" => Group::SMinus,
                _ => return Err(parse_err("group")),
            },
        });
    }
    Ok(out)
}

/// Shortest round-trippable decimal form.
pub(crate) fn fmt_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(score_f: f64, gold: bool, group: Group) -> JudgedSample {
        JudgedSample {
            message_id: String::new(),
            score_s: 0.0,
            score_f,
            gold_positive: gold,
            group,
        }
    }

    #[test]
    fn beta_one_equals_pooled_unadjusted_metrics() {
        let samples: Vec<JudgedSample> = (0..200)
            .map(|i| {
                sample(
                    (i % 100) as f64 / 100.0,
                    i % 3 == 0,
                    if i % 4 == 0 { Group::SMinus } else { Group::SPlus },
                )
            })
            .collect();
        let threshold = 0.4;
        let c = AdjustedConfusion::from_samples(&samples, threshold, 1.0);
        let (p, r) = adjusted_metrics(&c);

        let tp = samples.iter().filter(|s| s.gold_positive && s.score_f >= threshold).count() as f64;
        let fp = samples.iter().filter(|s| !s.gold_positive && s.score_f >= threshold).count() as f64;
        let fnn = samples.iter().filter(|s| s.gold_positive && s.score_f < threshold).count() as f64;
        assert!((p.unwrap() - tp / (tp + fp)).abs() < 1e-12);
        assert!((r.unwrap() - tp / (tp + fnn)).abs() < 1e-12);
    }

    #[test]
    fn same_sampler_and_final_model_leave_precision_unadjusted() {
        // When psi_s == psi_f and the sweep threshold equals the sampling
        // cutoff, every predicted positive is in G+, so the beta-weighted
        // strata vanish from the precision.
        let cutoff = 0.5;
        let samples: Vec<JudgedSample> = (0..100)
            .map(|i| {
                let score = i as f64 / 100.0;
                JudgedSample {
                    message_id: format!("m{i}"),
                    score_s: score,
                    score_f: score,
                    gold_positive: i % 2 == 0,
                    group: if score >= cutoff { Group::SPlus } else { Group::SMinus },
                }
            })
            .collect();
        let beta = 3.7;
        let c = AdjustedConfusion::from_samples(&samples, cutoff, beta);
        assert_eq!(c.p_sn_fp, 0);
        assert_eq!(c.n_sn_fp, 0);
        let (adj_p, _) = adjusted_metrics(&c);
        let unadj = AdjustedConfusion::from_samples(&samples, cutoff, 1.0);
        let (unadj_p, _) = adjusted_metrics(&unadj);
        assert!((adj_p.unwrap() - unadj_p.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_denominator_is_undefined_not_a_number() {
        let samples = vec![sample(0.1, false, Group::SPlus)];
        let c = AdjustedConfusion::from_samples(&samples, 0.5, 1.0);
        let (p, r) = adjusted_metrics(&c);
        assert!(p.is_none());
        assert!(r.is_none());
    }

    #[test]
    fn perfect_scorer_reaches_full_recall_at_any_target() {
        let mut samples = Vec::new();
        for i in 0..50 {
            samples.push(sample(0.9 + (i as f64) * 0.001, true, Group::SPlus));
            samples.push(sample(0.1 - (i as f64) * 0.001, false, Group::SMinus));
        }
        let r = recall_at_precision(&samples, 2.0, 1.0).unwrap();
        assert_eq!(r.recall, 1.0);
        assert!(r.threshold.is_some());
    }

    #[test]
    fn sweep_matches_brute_force_over_every_threshold() {
        // Oracle: recompute the confusion from scratch at every distinct
        // score and take the best qualifying recall.
        let mut state = 88172645463325252u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let samples: Vec<JudgedSample> = (0..400)
            .map(|_| {
                let gold = next() < 0.3;
                let score = if gold { 0.3 + 0.7 * next() } else { 0.6 * next() };
                sample(score, gold, if next() < 0.4 { Group::SMinus } else { Group::SPlus })
            })
            .collect();
        let beta = 2.5;
        let target = 0.8;
        let fast = recall_at_precision(&samples, beta, target).unwrap();

        let mut best: Option<(f64, f64)> = None;
        for s in &samples {
            let t = s.score_f;
            let c = AdjustedConfusion::from_samples(&samples, t, beta);
            let (p, r) = adjusted_metrics(&c);
            if let (Some(p), Some(r)) = (p, r) {
                if p >= target && best.map_or(true, |(br, _)| r > br) {
                    best = Some((r, t));
                }
            }
        }
        match best {
            Some((recall, threshold)) => {
                assert!((fast.recall - recall).abs() < 1e-12);
                assert_eq!(fast.threshold, Some(threshold));
            }
            None => assert_eq!(fast.threshold, None),
        }
    }

    #[test]
    fn no_qualifying_threshold_returns_zero_and_none() {
        // All negatives score above all positives: precision at any
        // threshold never reaches 0.99.
        let mut samples = Vec::new();
        for i in 0..20 {
            samples.push(sample(0.8 + (i as f64) * 0.001, false, Group::SPlus));
            samples.push(sample(0.2 + (i as f64) * 0.001, true, Group::SPlus));
        }
        let r = recall_at_precision(&samples, 1.0, 0.99).unwrap();
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.threshold, None);
    }

    #[test]
    fn recall_never_decreases_as_threshold_drops() {
        let samples: Vec<JudgedSample> = (0..300)
            .map(|i| sample(((i * 7919) % 1000) as f64 / 1000.0, i % 5 < 2, Group::SPlus))
            .collect();
        let mut thresholds: Vec<f64> = samples.iter().map(|s| s.score_f).collect();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let mut prev = -1.0;
        for t in thresholds {
            let c = AdjustedConfusion::from_samples(&samples, t, 1.0);
            let (_, r) = adjusted_metrics(&c);
            let r = r.unwrap();
            assert!(r >= prev, "recall decreased at threshold {t}");
            prev = r;
        }
    }

    #[test]
    fn sweep_is_invariant_under_strictly_monotone_score_transforms() {
        let samples: Vec<JudgedSample> = (0..200)
            .map(|i| sample(((i * 31) % 97) as f64 / 97.0, i % 4 == 0, if i % 3 == 0 { Group::SMinus } else { Group::SPlus }))
            .collect();
        let beta = 1.8;
        let base = recall_at_precision(&samples, beta, 0.6).unwrap();
        let transformed: Vec<JudgedSample> = samples
            .iter()
            .map(|s| {
                let mut t = s.clone();
                t.score_f = (s.score_f * 3.0).tanh(); // strictly monotone
                t
            })
            .collect();
        let mapped = recall_at_precision(&transformed, beta, 0.6).unwrap();
        assert!((base.recall - mapped.recall).abs() < 1e-12);
        assert_eq!(
            mapped.threshold,
            base.threshold.map(|t| (t * 3.0).tanh())
        );
    }

    #[test]
    fn judged_samples_round_trip_through_the_file_format() {
        let samples: Vec<JudgedSample> = (0..40)
            .map(|i| JudgedSample {
                message_id: format!("m{i:03}"),
                score_s: i as f64 / 41.0,
                score_f: 1.0 - i as f64 / 43.0,
                gold_positive: i % 3 == 0,
                group: if i % 2 == 0 { Group::SPlus } else { Group::SMinus },
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("judged.tsv");
        write_judged_samples(&path, &samples).unwrap();
        let back = read_judged_samples(&path).unwrap();
        assert_eq!(back, samples);
    }
}
