//! Sampled gradient estimators for the expected top-k metric.
//!
//! Both estimators average, over a shared set of sampled rankings, an exact
//! per-sample expression for the metric gradient. `plrank2_estimate` is the
//! reference: a literal double loop over items and ranks, O(D·K) per sample.
//! `plrank3_estimate` regroups the same per-sample algebra into three
//! rank-indexed prefix accumulators so one sample costs O(D + K); the two
//! agree to floating-point reordering error.
//!
//! All exponentials are taken after subtracting the maximum score; every
//! weight appears in a ratio against a sum of weights, so the shift cancels
//! exactly and the estimate is invariant under score translation.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::types::{
    effective_cutoff, GradientVector, MetricWeights, SampledRanking, ScoreVector, TypeError,
};

/// A denominator is rebuilt from scratch once subtraction has eaten this
/// fraction of its starting mass, to stop cancellation error compounding.
const DENOMINATOR_REBUILD_FRACTION: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GradientError {
    #[error("at least one sampled ranking is required")]
    NoRankings,
    #[error("ranking does not match the instance: {detail}")]
    RankingMismatch { detail: String },
    #[error(
        "remaining placement mass at rank {rank} is not positive; the score \
         spread exceeds what the scalar type can represent"
    )]
    DegenerateDenominator { rank: usize },
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Per-ranking scratch for the O(D + K) estimator: suffix rewards, the two
/// prefix accumulators, and the shrinking placement denominators.
#[derive(Debug, Clone)]
pub struct PlRank3Workspace<F> {
    /// `pr[r]` = reward gathered strictly after rank `r`:
    /// Σ_{k=r+1..=k_eff} θ_k ρ(y_k). `pr[k_eff]` is 0.
    pr: Vec<F>,
    /// `ri[r]` = Σ_{k=1..=r} pr[k-1] / S_k — the expected reward an item
    /// displaces by occupying one of the first `r` ranks. `ri[0]` is 0.
    ri: Vec<F>,
    /// `dr[r]` = Σ_{k=1..=r} θ_k / S_k — the direct reward rate over the
    /// first `r` ranks. `dr[0]` is 0.
    dr: Vec<F>,
    /// `denom[k-1]` = S_k, the total placement weight still unplaced when
    /// rank `k` is filled. Strictly positive and strictly decreasing.
    denom: Vec<F>,
    k_eff: usize,
}

impl<F: Scalar> PlRank3Workspace<F> {
    fn empty() -> Self {
        Self {
            pr: Vec::new(),
            ri: Vec::new(),
            dr: Vec::new(),
            denom: Vec::new(),
            k_eff: 0,
        }
    }

    /// Suffix rewards `pr[r]` for r = 0..=k_eff; `pr[0]` is the whole
    /// ranking's metric value.
    pub fn placement_rewards(&self) -> &[F] {
        &self.pr
    }

    /// Displaced-reward accumulator `ri[r]` for r = 0..=k_eff.
    pub fn risks(&self) -> &[F] {
        &self.ri
    }

    /// Direct-reward accumulator `dr[r]` for r = 0..=k_eff.
    pub fn direct_rewards(&self) -> &[F] {
        &self.dr
    }

    /// Shrinking denominators S_1..S_k_eff.
    pub fn denominators(&self) -> &[F] {
        &self.denom
    }

    pub fn k_eff(&self) -> usize {
        self.k_eff
    }

    /// Fills the accumulators for one ranking. `w` are the max-shifted
    /// placement weights and `w_total` their sum.
    fn rebuild(
        &mut self,
        w: &[F],
        w_total: F,
        ranking: &SampledRanking,
        rho: &[F],
        theta: &MetricWeights<F>,
    ) -> Result<(), GradientError> {
        let items = ranking.items();
        let k_eff = items.len();
        let weights = theta.weights();
        self.k_eff = k_eff;
        self.pr.resize(k_eff + 1, F::zero());
        self.ri.resize(k_eff + 1, F::zero());
        self.dr.resize(k_eff + 1, F::zero());
        self.denom.resize(k_eff, F::zero());

        self.pr[k_eff] = F::zero();
        for r in (0..k_eff).rev() {
            self.pr[r] = self.pr[r + 1] + weights[r] * rho[items[r]];
        }

        self.ri[0] = F::zero();
        self.dr[0] = F::zero();
        let floor = w_total * F::from_f64(DENOMINATOR_REBUILD_FRACTION);
        let mut s = w_total;
        for k in 1..=k_eff {
            // NaN must fail this test too, hence no `s <= 0` form.
            let positive = s > F::zero();
            if !positive {
                return Err(GradientError::DegenerateDenominator { rank: k });
            }
            self.denom[k - 1] = s;
            let inv = s.recip();
            self.ri[k] = self.ri[k - 1] + self.pr[k - 1] * inv;
            self.dr[k] = self.dr[k - 1] + weights[k - 1] * inv;
            if k < k_eff {
                s -= w[items[k - 1]];
                if s < floor {
                    s = remaining_mass(w, ranking, k);
                }
            }
        }
        Ok(())
    }
}

/// Total placement weight of the items not among the first `placed` ranks,
/// summed from scratch.
fn remaining_mass<F: Scalar>(w: &[F], ranking: &SampledRanking, placed: usize) -> F {
    let mut sum = F::zero();
    for (d, &raw) in ranking.raw_ranks().iter().enumerate() {
        if raw == 0 || raw > placed {
            sum += w[d];
        }
    }
    sum
}

/// Builds the O(D + K) estimator's scratch state for a single ranking,
/// exposing the accumulators for inspection.
pub fn build_workspace<F: Scalar>(
    scores: &ScoreVector<F>,
    ranking: &SampledRanking,
    rho: &[F],
    theta: &MetricWeights<F>,
) -> Result<PlRank3Workspace<F>, GradientError> {
    validate_instance(scores, rho, theta)?;
    validate_ranking(scores.len(), theta.cutoff(), ranking)?;
    let (w, w_total) = shifted_weights(scores);
    let mut ws = PlRank3Workspace::empty();
    ws.rebuild(&w, w_total, ranking, rho, theta)?;
    Ok(ws)
}

fn validate_instance<F: Scalar>(
    scores: &ScoreVector<F>,
    rho: &[F],
    _theta: &MetricWeights<F>,
) -> Result<(), GradientError> {
    if rho.len() != scores.len() {
        return Err(GradientError::Type(TypeError::LengthMismatch {
            what: "relevances",
            expected: scores.len(),
            got: rho.len(),
        }));
    }
    for (index, &r) in rho.iter().enumerate() {
        if !r.is_finite() {
            return Err(GradientError::Type(TypeError::NonFinite {
                what: "relevance",
                value: r.as_f64(),
            }));
        }
        if r < F::zero() {
            return Err(GradientError::Type(TypeError::NegativeRelevance { index }));
        }
    }
    Ok(())
}

fn validate_ranking(
    item_count: usize,
    cutoff: usize,
    ranking: &SampledRanking,
) -> Result<(), GradientError> {
    if ranking.domain_size() != item_count {
        return Err(GradientError::RankingMismatch {
            detail: format!(
                "ranking covers a domain of {} items, instance has {}",
                ranking.domain_size(),
                item_count
            ),
        });
    }
    let k_eff = effective_cutoff(item_count, cutoff)?;
    if ranking.len() != k_eff {
        return Err(GradientError::RankingMismatch {
            detail: format!(
                "ranking places {} items, cutoff {} over {} items fills {}",
                ranking.len(),
                cutoff,
                item_count,
                k_eff
            ),
        });
    }
    Ok(())
}

/// Max-shifted placement weights e^{f_d - max f} and their sum. The sum is
/// at least 1 because the maximal item contributes e^0.
fn shifted_weights<F: Scalar>(scores: &ScoreVector<F>) -> (Vec<F>, F) {
    let max = scores
        .iter()
        .copied()
        .fold(F::neg_infinity(), |acc, s| if s > acc { s } else { acc });
    let w: Vec<F> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total = w.iter().copied().sum();
    (w, total)
}

/// O(D + K)-per-sample estimator of the expected-metric gradient, averaged
/// over `rankings`. Returns the per-item gradient.
pub fn plrank3_estimate<F: Scalar>(
    scores: &ScoreVector<F>,
    rho: &[F],
    theta: &MetricWeights<F>,
    rankings: &[SampledRanking],
) -> Result<GradientVector<F>, GradientError> {
    plrank3_estimate_counted(scores, rho, theta, rankings).map(|(g, _)| g)
}

/// [`plrank3_estimate`] plus a count of executed inner-loop iterations,
/// used to assert the work scaling.
pub fn plrank3_estimate_counted<F: Scalar>(
    scores: &ScoreVector<F>,
    rho: &[F],
    theta: &MetricWeights<F>,
    rankings: &[SampledRanking],
) -> Result<(GradientVector<F>, u64), GradientError> {
    validate_instance(scores, rho, theta)?;
    if rankings.is_empty() {
        return Err(GradientError::NoRankings);
    }
    let d_count = scores.len();
    let (w, w_total) = shifted_weights(scores);
    let mut ws = PlRank3Workspace::empty();
    let mut grad = vec![F::zero(); d_count];
    let mut ops: u64 = 0;
    for ranking in rankings {
        validate_ranking(d_count, theta.cutoff(), ranking)?;
        ws.rebuild(&w, w_total, ranking, rho, theta)?;
        let k_eff = ws.k_eff;
        for (d, &raw) in ranking.raw_ranks().iter().enumerate() {
            let r = if raw == 0 { k_eff } else { raw };
            grad[d] += ws.pr[r] + w[d] * (rho[d] * ws.dr[r] - ws.ri[r]);
        }
        ops += 2 * k_eff as u64 + d_count as u64;
    }
    let inv_n = F::one() / F::from_f64(rankings.len() as f64);
    for g in &mut grad {
        *g *= inv_n;
    }
    Ok((GradientVector::new(grad)?, ops))
}

/// Reference estimator: the same per-sample expression as
/// [`plrank3_estimate`], evaluated by a literal double loop over items and
/// ranks — deliberately O(D·K) per sample.
pub fn plrank2_estimate<F: Scalar>(
    scores: &ScoreVector<F>,
    rho: &[F],
    theta: &MetricWeights<F>,
    rankings: &[SampledRanking],
) -> Result<GradientVector<F>, GradientError> {
    plrank2_estimate_counted(scores, rho, theta, rankings).map(|(g, _)| g)
}

/// [`plrank2_estimate`] plus a count of executed inner-loop iterations.
pub fn plrank2_estimate_counted<F: Scalar>(
    scores: &ScoreVector<F>,
    rho: &[F],
    theta: &MetricWeights<F>,
    rankings: &[SampledRanking],
) -> Result<(GradientVector<F>, u64), GradientError> {
    validate_instance(scores, rho, theta)?;
    if rankings.is_empty() {
        return Err(GradientError::NoRankings);
    }
    let d_count = scores.len();
    let weights = theta.weights();
    let (w, _) = shifted_weights(scores);
    let mut grad = vec![F::zero(); d_count];
    let mut suffix_reward: Vec<F> = Vec::new();
    let mut inv_denom: Vec<F> = Vec::new();
    let mut placed = vec![false; d_count];
    let mut ops: u64 = 0;
    for ranking in rankings {
        validate_ranking(d_count, theta.cutoff(), ranking)?;
        let items = ranking.items();
        let k_eff = items.len();

        suffix_reward.resize(k_eff + 1, F::zero());
        suffix_reward[k_eff] = F::zero();
        for r in (0..k_eff).rev() {
            suffix_reward[r] = suffix_reward[r + 1] + weights[r] * rho[items[r]];
        }
        ops += k_eff as u64;

        // Denominators by direct summation over the not-yet-placed items —
        // an independent route from the subtraction scheme of the fast
        // estimator.
        inv_denom.resize(k_eff, F::zero());
        for k in 0..k_eff {
            if k > 0 {
                placed[items[k - 1]] = true;
            }
            let mut s = F::zero();
            for d in 0..d_count {
                if !placed[d] {
                    s += w[d];
                }
            }
            ops += d_count as u64;
            // NaN must fail this test too, hence no `s <= 0` form.
            let positive = s > F::zero();
            if !positive {
                for &item in items {
                    placed[item] = false;
                }
                return Err(GradientError::DegenerateDenominator { rank: k + 1 });
            }
            inv_denom[k] = s.recip();
        }
        for &item in items {
            placed[item] = false;
        }

        for (d, &raw) in ranking.raw_ranks().iter().enumerate() {
            let r = if raw == 0 { k_eff } else { raw };
            let mut acc = suffix_reward[r];
            for k in 0..r {
                acc += (w[d] * inv_denom[k]) * (weights[k] * rho[d] - suffix_reward[k]);
            }
            ops += r as u64;
            grad[d] += acc;
        }
    }
    let inv_n = F::one() / F::from_f64(rankings.len() as f64);
    for g in &mut grad {
        *g *= inv_n;
    }
    Ok((GradientVector::new(grad)?, ops))
}
