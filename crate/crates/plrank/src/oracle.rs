//! Exact small-instance oracles: enumeration of the ranking distribution,
//! exact expected metric, and the exact metric gradient.
//!
//! Everything here is deliberately naive — direct sums over the enumerated
//! distribution, with no shared accumulators — so it can serve as an
//! independent reference for the sampled estimators. The exact gradient is
//! itself cross-checked against central finite differences of the exact
//! expected metric in the tests.

use thiserror::Error;

use crate::metrics::{metric_value, MetricError};
use crate::sampling::{placement_probability, ranking_log_probability, SamplingError};
use crate::scalar::Scalar;
use crate::types::{
    effective_cutoff, GradientVector, MetricWeights, SampledRanking, ScoreVector, TypeError,
};

/// Enumeration refuses instances with more ordered sequences than this.
pub const MAX_SEQUENCES: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(
        "enumeration of {sequences} ordered sequences exceeds the cap of {MAX_SEQUENCES}; \
         use smaller instances"
    )]
    TooLarge { sequences: u128 },
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// All ordered top-k sequences of `item_count` items, in lexicographic
/// order. There are D!/(D-k)! of them; instances past [`MAX_SEQUENCES`]
/// are refused.
pub fn enumerate_rankings(
    item_count: usize,
    cutoff: usize,
) -> Result<Vec<Vec<usize>>, OracleError> {
    let k_eff = effective_cutoff(item_count, cutoff)?;
    let mut sequences: u128 = 1;
    for i in 0..k_eff {
        sequences = sequences.saturating_mul((item_count - i) as u128);
        if sequences > MAX_SEQUENCES {
            return Err(OracleError::TooLarge { sequences });
        }
    }
    let mut out = Vec::with_capacity(sequences as usize);
    let mut prefix = Vec::with_capacity(k_eff);
    let mut used = vec![false; item_count];
    extend(&mut out, &mut prefix, &mut used, item_count, k_eff);
    Ok(out)
}

fn extend(
    out: &mut Vec<Vec<usize>>,
    prefix: &mut Vec<usize>,
    used: &mut [bool],
    item_count: usize,
    k_eff: usize,
) {
    if prefix.len() == k_eff {
        out.push(prefix.clone());
        return;
    }
    for item in 0..item_count {
        if !used[item] {
            used[item] = true;
            prefix.push(item);
            extend(out, prefix, used, item_count, k_eff);
            prefix.pop();
            used[item] = false;
        }
    }
}

/// The full ranking distribution: every top-k ranking with its exact
/// probability.
pub fn ranking_distribution<F: Scalar>(
    scores: &ScoreVector<F>,
    cutoff: usize,
) -> Result<Vec<(SampledRanking, F)>, OracleError> {
    enumerate_rankings(scores.len(), cutoff)?
        .into_iter()
        .map(|items| {
            let ranking = SampledRanking::new(items, scores.len())?;
            let prob = ranking_log_probability(scores, &ranking)?.exp();
            Ok((ranking, prob))
        })
        .collect()
}

/// Exact expected metric value under the Plackett-Luce distribution:
/// Σ_y π(y) · metric(y).
pub fn exact_expected_metric<F: Scalar>(
    scores: &ScoreVector<F>,
    rho: &[F],
    theta: &MetricWeights<F>,
) -> Result<F, OracleError> {
    let mut expected = F::zero();
    for (ranking, prob) in ranking_distribution(scores, theta.cutoff())? {
        expected += prob * metric_value(&ranking, rho, theta)?;
    }
    Ok(expected)
}

/// Exact gradient of the expected metric with respect to each score.
///
/// Expands, for every ranking `y` and item `d`, the decomposition of the
/// score-function estimator: the reward placed after `d`'s rank, plus for
/// every rank at or before it the placement probability times the rank's
/// reward swing. All inner sums are evaluated directly.
pub fn exact_gradient<F: Scalar>(
    scores: &ScoreVector<F>,
    rho: &[F],
    theta: &MetricWeights<F>,
) -> Result<GradientVector<F>, OracleError> {
    let d_count = scores.len();
    if rho.len() != d_count {
        return Err(OracleError::Type(TypeError::LengthMismatch {
            what: "relevances",
            expected: d_count,
            got: rho.len(),
        }));
    }
    let weights = theta.weights();
    let mut grad = vec![F::zero(); d_count];
    for (ranking, prob) in ranking_distribution(scores, theta.cutoff())? {
        let items = ranking.items();
        let k_eff = items.len();
        for d in 0..d_count {
            let r = ranking.rank_of(d).unwrap_or(k_eff).min(k_eff);
            // Reward gathered strictly after d's rank.
            let mut bracket = F::zero();
            for k in r..k_eff {
                bracket += weights[k] * rho[items[k]];
            }
            // Swing at each rank up to and including d's.
            for k in 0..r {
                let placement = placement_probability(scores, &items[..k], d)?;
                let mut tail = F::zero();
                for x in k..k_eff {
                    tail += weights[x] * rho[items[x]];
                }
                bracket += placement * (weights[k] * rho[d] - tail);
            }
            grad[d] += prob * bracket;
        }
    }
    Ok(GradientVector::new(grad)?)
}

/// Central finite differences of the exact expected metric: the numerical
/// route against which [`exact_gradient`] is verified.
pub fn finite_difference_gradient<F: Scalar>(
    scores: &ScoreVector<F>,
    rho: &[F],
    theta: &MetricWeights<F>,
    step: F,
) -> Result<Vec<F>, OracleError> {
    let mut grad = Vec::with_capacity(scores.len());
    for d in 0..scores.len() {
        let mut plus = scores.to_vec();
        plus[d] += step;
        let mut minus = scores.to_vec();
        minus[d] -= step;
        let up = exact_expected_metric(&ScoreVector::new(plus)?, rho, theta)?;
        let down = exact_expected_metric(&ScoreVector::new(minus)?, rho, theta)?;
        grad.push((up - down) / (step + step));
    }
    Ok(grad)
}
