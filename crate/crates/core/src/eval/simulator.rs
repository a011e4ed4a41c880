//! Whole-population simulator: the correctness oracle for the adjusted
//! metrics.
//!
//! Every record carries a true label and scores from two models. A model is
//! specified by its operating point (precision, recall) at threshold 0.5
//! under the configured positive prior: positives score above 0.5 with
//! probability TPR = recall, negatives with probability
//! FPR = prior · recall · (1 − precision) / ((1 − prior) · precision).
//! Scores are uniform within the chosen half, so threshold sweeps are
//! well-behaved. Because labels and scores are all known, exact population
//! confusion counts are available at any threshold.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{par, rng, Error, Result};

/// Target (precision, recall) of a simulated model at threshold 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub precision: f64,
    pub recall: f64,
}

impl OperatingPoint {
    /// (TPR, FPR) achieving this operating point at the given prior.
    pub fn rates(&self, prior_pos: f64) -> Result<(f64, f64)> {
        if !(0.0 < self.precision && self.precision <= 1.0) || !(0.0..=1.0).contains(&self.recall)
        {
            return Err(Error::InvalidConfig(format!(
                "operating point ({}, {}) out of range",
                self.precision, self.recall
            )));
        }
        let tpr = self.recall;
        let fpr = prior_pos * tpr * (1.0 - self.precision) / ((1.0 - prior_pos) * self.precision);
        if fpr > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "operating point ({}, {}) infeasible at prior {prior_pos}: FPR {fpr} > 1",
                self.precision, self.recall
            )));
        }
        Ok((tpr, fpr))
    }
}

/// Class prior and per-model operating points of the simulated population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatorSpec {
    pub prior_pos: f64,
    pub sampler: OperatingPoint,
    pub final_model: OperatingPoint,
    /// Reuse the sampler's scores as the final model's (the ψ_s = ψ_f case).
    pub f_equals_s: bool,
    pub size: usize,
    pub seed: u64,
}

/// One simulated record.
#[derive(Debug, Clone, PartialEq)]
pub struct PopRecord {
    pub label_positive: bool,
    pub score_s: f64,
    pub score_f: f64,
}

impl SimulatorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.prior_pos) || self.prior_pos == 0.0 {
            return Err(Error::InvalidConfig(format!(
                "prior_pos {} must be in (0, 1)",
                self.prior_pos
            )));
        }
        if self.size == 0 {
            return Err(Error::InvalidConfig("population size must be positive".into()));
        }
        self.rates()?;
        Ok(())
    }

    fn rates(&self) -> Result<((f64, f64), (f64, f64))> {
        Ok((
            self.sampler.rates(self.prior_pos)?,
            self.final_model.rates(self.prior_pos)?,
        ))
    }

    /// Generates the population; record `i` draws from its own seeded stream.
    pub fn generate(&self) -> Result<Vec<PopRecord>> {
        self.validate()?;
        let ((s_tpr, s_fpr), (f_tpr, f_fpr)) = self.rates()?;
        let records = par::map_collect_indexed(self.size, |i| {
            let mut r = rng::stream_indexed(self.seed, "sim-pop", i as u64);
            let label_positive = r.gen::<f64>() < self.prior_pos;
            let score_s = draw_score(&mut r, label_positive, s_tpr, s_fpr);
            let score_f = if self.f_equals_s {
                score_s
            } else {
                draw_score(&mut r, label_positive, f_tpr, f_fpr)
            };
            PopRecord {
                label_positive,
                score_s,
                score_f,
            }
        });
        Ok(records)
    }
}

fn draw_score(r: &mut impl Rng, positive: bool, tpr: f64, fpr: f64) -> f64 {
    let p_above = if positive { tpr } else { fpr };
    if r.gen::<f64>() < p_above {
        0.5 + 0.5 * r.gen::<f64>()
    } else {
        0.5 * r.gen::<f64>()
    }
}

/// Exact population confusion counts `(n11, n10, n01, n00)` for the final
/// model at `threshold`: actual × predicted, positives first.
pub fn population_confusion(pop: &[PopRecord], threshold: f64) -> (u64, u64, u64, u64) {
    let mut n11 = 0;
    let mut n10 = 0;
    let mut n01 = 0;
    let mut n00 = 0;
    for rec in pop {
        match (rec.label_positive, rec.score_f >= threshold) {
            (true, true) => n11 += 1,
            (true, false) => n10 += 1,
            (false, true) => n01 += 1,
            (false, false) => n00 += 1,
        }
    }
    (n11, n10, n01, n00)
}

/// Population precision/recall at `threshold`; `None` on empty denominators.
pub fn population_metrics(pop: &[PopRecord], threshold: f64) -> (Option<f64>, Option<f64>) {
    let (n11, n10, n01, _) = population_confusion(pop, threshold);
    let precision = if n11 + n01 > 0 {
        Some(n11 as f64 / (n11 + n01) as f64)
    } else {
        None
    };
    let recall = if n11 + n10 > 0 {
        Some(n11 as f64 / (n11 + n10) as f64)
    } else {
        None
    };
    (precision, recall)
}
