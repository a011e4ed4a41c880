//! Stratified sampling driven by a sampling model's scores.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which ψ_s group a judged sample was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    SPlus,
    SMinus,
}

/// A population record eligible for judging: ψ_s score plus the gold label
/// that stands in for an editorial judgement.
#[derive(Debug, Clone)]
pub struct ScoredMessage {
    pub message_id: String,
    pub score_s: f64,
    pub gold_positive: bool,
}

/// A judged sample with both model scores and its sampling group.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgedSample {
    pub message_id: String,
    pub score_s: f64,
    pub score_f: f64,
    pub gold_positive: bool,
    pub group: Group,
}

/// How the judged test set is drawn: the ψ_s cutoff splitting the population
/// into G+/G−, the recorded group-size ratio k = |G−|/|G+|, and the per-group
/// sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub cutoff_s: f64,
    pub k_ratio: f64,
    pub m_s_plus: usize,
    pub m_s_minus: usize,
}

impl SamplingPlan {
    /// Builds a plan for a scored population, computing `k_ratio` from the
    /// actual group sizes at `cutoff_s`.
    pub fn for_population(
        scores: &[ScoredMessage],
        cutoff_s: f64,
        m_s_plus: usize,
        m_s_minus: usize,
    ) -> Result<Self> {
        let g_plus = scores.iter().filter(|s| s.score_s >= cutoff_s).count();
        let g_minus = scores.len() - g_plus;
        if g_plus == 0 || g_minus == 0 {
            return Err(Error::Data(format!(
                "sampling cutoff {cutoff_s} leaves an empty group (|G+| = {g_plus}, |G-| = {g_minus})"
            )));
        }
        Ok(Self {
            cutoff_s,
            k_ratio: g_minus as f64 / g_plus as f64,
            m_s_plus,
            m_s_minus,
        })
    }

    /// The duplication weight for ψ_s-negative strata:
    /// β = (M_s+ / M_s−) · k.
    pub fn beta(&self) -> f64 {
        self.m_s_plus as f64 / self.m_s_minus as f64 * self.k_ratio
    }
}

/// Samples `plan.m_s_plus` messages uniformly without replacement from G+
/// and `plan.m_s_minus` from G−, tagging each with its group. Requesting more
/// than a group holds is a hard error. Output order is (G+ then G−), each in
/// draw order; the draw depends only on `seed` and the population order.
pub fn stratified_sample(
    scores: &[ScoredMessage],
    plan: &SamplingPlan,
    seed: u64,
) -> Result<Vec<(ScoredMessage, Group)>> {
    let beta = plan.beta();
    if !(1.0..=10.0).contains(&beta) {
        log::warn!("beta = {beta:.3} outside the typical [1, 10] range");
    }
    let mut g_plus: Vec<&ScoredMessage> = Vec::new();
    let mut g_minus: Vec<&ScoredMessage> = Vec::new();
    for s in scores {
        if s.score_s >= plan.cutoff_s {
            g_plus.push(s);
        } else {
            g_minus.push(s);
        }
    }
    if plan.m_s_plus > g_plus.len() || plan.m_s_minus > g_minus.len() {
        return Err(Error::Data(format!(
            "sample counts ({}, {}) exceed group sizes ({}, {})",
            plan.m_s_plus,
            plan.m_s_minus,
            g_plus.len(),
            g_minus.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (plus_sel, _) = g_plus.partial_shuffle(&mut rng, plan.m_s_plus);
    let mut out: Vec<(ScoredMessage, Group)> = plus_sel
        .iter()
        .map(|s| ((**s).clone(), Group::SPlus))
        .collect();
    let (minus_sel, _) = g_minus.partial_shuffle(&mut rng, plan.m_s_minus);
    out.extend(minus_sel.iter().map(|s| ((**s).clone(), Group::SMinus)));
    Ok(out)
}
