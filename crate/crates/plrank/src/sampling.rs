//! Plackett-Luce sampling: Gumbel top-k draws, placement probabilities,
//! and reproducible RNG substreams.
//!
//! Sampling a top-k ranking uses the Gumbel trick: perturb every score with
//! independent standard Gumbel noise and take the k largest perturbed
//! scores. Selection is partial (a bounded heap), so one draw costs
//! O(D + k log D) rather than a full sort.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::types::{effective_cutoff, SampledRanking, ScoreVector, TypeError};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("prefix already covers every item; nothing can be placed")]
    EmptyRemainder,
    #[error(transparent)]
    Type(#[from] TypeError),
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Root of all randomness in a run.
///
/// Substreams are derived by hashing `(base seed, domain, id, epoch, block)`,
/// so any batch of samples can be reproduced in isolation without replaying
/// the draws that preceded it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    base_seed: u64,
}

impl RngStream {
    pub fn new(base_seed: u64) -> Self {
        Self { base_seed }
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    fn derive(&self, domain: u8, id: &str, a: u64, b: u64) -> u64 {
        let mut h = fnv1a(FNV_OFFSET, &self.base_seed.to_le_bytes());
        h = fnv1a(h, &[domain]);
        h = fnv1a(h, &(id.len() as u64).to_le_bytes());
        h = fnv1a(h, id.as_bytes());
        h = fnv1a(h, &a.to_le_bytes());
        h = fnv1a(h, &b.to_le_bytes());
        splitmix64(h)
    }

    /// Generator for one query's sample block within one epoch.
    pub fn sampler(&self, query_id: &str, epoch: u64, block: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(1, query_id, epoch, block))
    }

    /// Generator for the per-epoch query-order shuffle.
    pub fn shuffler(&self, epoch: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(2, "", epoch, 0))
    }

    /// Seed for an auxiliary purpose named by `tag` (model init, synthetic
    /// data, ...), decorrelated from the sampling streams.
    pub fn derived_seed(&self, tag: &str) -> u64 {
        self.derive(3, tag, 0, 0)
    }
}

/// Standard Gumbel draw, `-ln(-ln u)` with `u` uniform on (0, 1).
///
/// The uniform is clamped away from zero by the smallest positive normal so
/// the double logarithm stays finite.
fn standard_gumbel(rng: &mut impl Rng) -> f64 {
    let mut u: f64 = rng.random();
    if u == 0.0 {
        u = f64::MIN_POSITIVE;
    }
    -(-u.ln()).ln()
}

/// Packs a non-NaN value so that ascending `u64` order is descending value
/// order; `-0.0` packs like `+0.0`. Tuples `(key, index)` under the derived
/// integer order then rank by value first, equal values by lower index.
#[inline]
fn inverted_order_key<F: Scalar>(v: F) -> u64 {
    // +0.0 normalizes a possible -0.0 (IEEE: -0 + +0 = +0).
    let bits = (v.as_f64() + 0.0).to_bits();
    let ascending = if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    };
    !ascending
}

/// Indices of the `k` largest values, best first; ties prefer the lower
/// index, and values must not be NaN. Partial selection over packed
/// (key, index) pairs: O(len) average plus an O(k log k) sort of the kept
/// prefix, so the cost is nearly flat in `k`.
pub fn partial_top_k<F: Scalar>(values: &[F], k: usize) -> Vec<usize> {
    partial_top_k_with(values, k, &mut Vec::new())
}

/// [`partial_top_k`] with a caller-owned scratch buffer, so a sampling loop
/// does not reallocate the packed keys on every draw.
fn partial_top_k_with<F: Scalar>(
    values: &[F],
    k: usize,
    scratch: &mut Vec<(u64, u32)>,
) -> Vec<usize> {
    let k = k.min(values.len());
    if k == 0 {
        return Vec::new();
    }
    scratch.clear();
    scratch.extend(
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (inverted_order_key(v), i as u32)),
    );
    if k < scratch.len() {
        scratch.select_nth_unstable(k - 1);
        scratch.truncate(k);
    }
    scratch.sort_unstable();
    scratch.iter().map(|&(_, i)| i as usize).collect()
}

/// Draws `n_samples` top-k rankings from the Plackett-Luce distribution
/// induced by `scores`, via Gumbel perturbation.
pub fn gumbel_sample_rankings<F: Scalar, R: Rng>(
    scores: &ScoreVector<F>,
    cutoff: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<SampledRanking>, SamplingError> {
    if n_samples == 0 {
        return Err(SamplingError::NoSamples);
    }
    let k_eff = effective_cutoff(scores.len(), cutoff)?;
    let mut rankings = Vec::with_capacity(n_samples);
    let mut perturbed = vec![F::zero(); scores.len()];
    let mut scratch = Vec::with_capacity(scores.len());
    for _ in 0..n_samples {
        for (p, &s) in perturbed.iter_mut().zip(scores.iter()) {
            *p = s + F::from_f64(standard_gumbel(rng));
        }
        let items = partial_top_k_with(&perturbed, k_eff, &mut scratch);
        rankings.push(SampledRanking::new(items, scores.len())?);
    }
    Ok(rankings)
}

/// Deterministic ranking: top `cutoff` items by score, ties by lower index.
pub fn top_k_by_score<F: Scalar>(
    scores: &ScoreVector<F>,
    cutoff: usize,
) -> Result<SampledRanking, SamplingError> {
    let k_eff = effective_cutoff(scores.len(), cutoff)?;
    Ok(SampledRanking::new(
        partial_top_k(scores, k_eff),
        scores.len(),
    )?)
}

/// Probability that `item` is placed next, given the items already placed
/// in `prefix`. Placed items have probability zero.
pub fn placement_probability<F: Scalar>(
    scores: &ScoreVector<F>,
    prefix: &[usize],
    item: usize,
) -> Result<F, SamplingError> {
    let d = scores.len();
    if item >= d {
        return Err(SamplingError::Type(TypeError::IndexOutOfRange {
            index: item,
            domain: d,
        }));
    }
    let mut placed = vec![false; d];
    for &p in prefix {
        if p >= d {
            return Err(SamplingError::Type(TypeError::IndexOutOfRange {
                index: p,
                domain: d,
            }));
        }
        if placed[p] {
            return Err(SamplingError::Type(TypeError::DuplicateItem { index: p }));
        }
        placed[p] = true;
    }
    if prefix.len() >= d {
        return Err(SamplingError::EmptyRemainder);
    }
    if placed[item] {
        return Ok(F::zero());
    }
    // Max-shifted exponentials over the remaining items; the shift cancels.
    let mut max = F::neg_infinity();
    for i in 0..d {
        if !placed[i] && scores[i] > max {
            max = scores[i];
        }
    }
    let mut denom = F::zero();
    for i in 0..d {
        if !placed[i] {
            denom += (scores[i] - max).exp();
        }
    }
    Ok((scores[item] - max).exp() / denom)
}

/// Log-probability of drawing `ranking` from the distribution induced by
/// `scores`: the sum of the log placement probabilities along the ranking.
pub fn ranking_log_probability<F: Scalar>(
    scores: &ScoreVector<F>,
    ranking: &SampledRanking,
) -> Result<F, SamplingError> {
    let d = scores.len();
    if ranking.domain_size() != d {
        return Err(SamplingError::Type(TypeError::LengthMismatch {
            what: "ranking domain items",
            expected: d,
            got: ranking.domain_size(),
        }));
    }
    let mut placed = vec![false; d];
    let mut log_prob = F::zero();
    for &item in ranking.items() {
        let mut max = F::neg_infinity();
        for i in 0..d {
            if !placed[i] && scores[i] > max {
                max = scores[i];
            }
        }
        let mut sum = F::zero();
        for i in 0..d {
            if !placed[i] {
                sum += (scores[i] - max).exp();
            }
        }
        log_prob += scores[item] - max - sum.ln();
        placed[item] = true;
    }
    Ok(log_prob)
}

/// Pearson chi-square statistic of observed counts against expected
/// probabilities. Used to test sampled ranking frequencies against the
/// exact distribution.
pub fn chi_square_statistic(observed: &[u64], expected_probs: &[f64]) -> f64 {
    assert_eq!(
        observed.len(),
        expected_probs.len(),
        "observed and expected must align"
    );
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0;
    for (&obs, &p) in observed.iter().zip(expected_probs) {
        let expected = n as f64 * p;
        let diff = obs as f64 - expected;
        stat += diff * diff / expected;
    }
    stat
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(v: Vec<f64>) -> ScoreVector<f64> {
        ScoreVector::new(v).unwrap()
    }

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let stream = RngStream::new(42);
        let s = scores(vec![0.3, -0.7, 1.2, 0.0]);

        let a = gumbel_sample_rankings(&s, 3, 50, &mut stream.sampler("q7", 2, 0)).unwrap();
        let b = gumbel_sample_rankings(&s, 3, 50, &mut stream.sampler("q7", 2, 0)).unwrap();
        assert_eq!(a, b, "same (seed, query, epoch, block) must replay exactly");

        let c = gumbel_sample_rankings(&s, 3, 50, &mut stream.sampler("q7", 3, 0)).unwrap();
        assert_ne!(a, c, "different epochs must use different noise");

        let d = gumbel_sample_rankings(&s, 3, 50, &mut stream.sampler("q8", 2, 0)).unwrap();
        assert_ne!(a, d, "different queries must use different noise");
    }

    #[test]
    fn sampled_rankings_have_the_right_shape() {
        let stream = RngStream::new(7);
        let s = scores(vec![0.0, 1.0, 2.0]);
        // Cutoff beyond the item count truncates to a full permutation.
        let rankings = gumbel_sample_rankings(&s, 10, 20, &mut stream.sampler("q", 0, 0)).unwrap();
        for r in &rankings {
            assert_eq!(r.len(), 3);
            assert_eq!(r.domain_size(), 3);
        }
        assert!(matches!(
            gumbel_sample_rankings(&s, 2, 0, &mut stream.sampler("q", 0, 0)),
            Err(SamplingError::NoSamples)
        ));
    }

    #[test]
    fn uniform_scores_give_uniform_permutations() {
        let stream = RngStream::new(11);
        let s = scores(vec![0.0, 0.0, 0.0]);
        let n = 60_000;
        let rankings = gumbel_sample_rankings(&s, 3, n, &mut stream.sampler("q", 0, 0)).unwrap();
        let mut counts = std::collections::HashMap::new();
        for r in rankings {
            *counts.entry(r.items().to_vec()).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for (perm, count) in counts {
            let freq = count as f64 / n as f64;
            assert!(
                (freq - p).abs() <= 4.0 * se,
                "permutation {perm:?} frequency {freq} strays from {p} by more than 4 SE"
            );
        }
    }

    #[test]
    fn first_position_frequency_matches_softmax() {
        // e^{ln 3} / (e^{ln 3} + e^0) = 3/4.
        let stream = RngStream::new(13);
        let s = scores(vec![3.0f64.ln(), 0.0]);
        let n = 40_000;
        let rankings = gumbel_sample_rankings(&s, 1, n, &mut stream.sampler("q", 0, 0)).unwrap();
        let wins = rankings.iter().filter(|r| r.items()[0] == 0).count();
        let freq = wins as f64 / n as f64;
        let se = (0.75 * 0.25 / n as f64).sqrt();
        assert!(
            (freq - 0.75).abs() <= 4.0 * se,
            "top-choice frequency {freq} strays from 0.75 by more than 4 SE"
        );
    }

    #[test]
    fn shared_noise_is_shift_invariant() {
        let stream = RngStream::new(5);
        let base = scores(vec![0.4, -1.0, 0.9, 0.0, 2.2]);
        let shifted = scores(base.iter().map(|&x| x + 3.5).collect());
        let a = gumbel_sample_rankings(&base, 3, 200, &mut stream.sampler("q", 1, 0)).unwrap();
        let b = gumbel_sample_rankings(&shifted, 3, 200, &mut stream.sampler("q", 1, 0)).unwrap();
        assert_eq!(a, b, "a shared-noise draw must not depend on a score shift");
    }

    #[test]
    fn sampled_frequencies_pass_chi_square_against_exact_probabilities() {
        // All 6 permutations of 3 items under distinctly non-uniform scores.
        let s = scores(vec![0.5, -0.3, 1.1]);
        let perms: Vec<Vec<usize>> = vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0],
        ];
        let expected: Vec<f64> = perms
            .iter()
            .map(|p| {
                let r = SampledRanking::new(p.clone(), 3).unwrap();
                ranking_log_probability(&s, &r).unwrap().exp()
            })
            .collect();
        assert!((expected.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let stream = RngStream::new(17);
        let n = 30_000;
        let rankings = gumbel_sample_rankings(&s, 3, n, &mut stream.sampler("q", 0, 0)).unwrap();
        let mut observed = vec![0u64; 6];
        for r in rankings {
            let idx = perms.iter().position(|p| p == r.items()).unwrap();
            observed[idx] += 1;
        }
        let stat = chi_square_statistic(&observed, &expected);
        // Critical value for 5 degrees of freedom at significance 0.001.
        assert!(
            stat < 20.515,
            "chi-square statistic {stat} rejects the exact sampling distribution"
        );
    }

    #[test]
    fn placement_probability_basics() {
        let s = scores(vec![0.0, 0.0, 0.0, 0.0]);
        let p = placement_probability(&s, &[], 2).unwrap();
        assert!((p - 0.25).abs() < 1e-15);

        let p = placement_probability(&s, &[1], 2).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-15);

        assert_eq!(placement_probability(&s, &[2], 2).unwrap(), 0.0);
        assert!(matches!(
            placement_probability(&s, &[0, 1, 2, 3], 0),
            Err(SamplingError::EmptyRemainder)
        ));
    }

    #[test]
    fn placement_probability_survives_extreme_spreads() {
        let s = scores(vec![1000.0, -1000.0]);
        let p = placement_probability(&s, &[], 0).unwrap();
        assert!(p.is_finite());
        assert!((p - 1.0).abs() < 1e-12);
        let q = placement_probability(&s, &[], 1).unwrap();
        assert!(q.is_finite());
        assert!((0.0..1e-300).contains(&q));
    }

    #[test]
    fn ranking_log_probability_uniform_pair() {
        let s = scores(vec![0.0, 0.0]);
        let r = SampledRanking::new(vec![1, 0], 2).unwrap();
        let lp = ranking_log_probability(&s, &r).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn f32_sampling_smoke() {
        let stream = RngStream::new(3);
        let s = ScoreVector::new(vec![0.5f32, -0.25, 0.0]).unwrap();
        let rankings = gumbel_sample_rankings(&s, 2, 10, &mut stream.sampler("q", 0, 0)).unwrap();
        assert_eq!(rankings.len(), 10);
        let p: f32 = placement_probability(&s, &[], 0).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn partial_top_k_matches_full_sort(
            values in proptest::collection::vec(-8i32..8, 1..40),
            k in 1usize..45,
        ) {
            // Coarse integer values force plenty of ties.
            let values: Vec<f64> = values.into_iter().map(|v| v as f64 / 2.0).collect();
            let mut reference: Vec<usize> = (0..values.len()).collect();
            reference.sort_by(|&a, &b| {
                values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b))
            });
            reference.truncate(k.min(values.len()));
            prop_assert_eq!(partial_top_k(&values, k), reference);
        }

        #[test]
        fn placement_probabilities_sum_to_one(
            raw in proptest::collection::vec(-30.0f64..30.0, 2..12),
            prefix_len in 0usize..6,
        ) {
            let s = scores(raw);
            let prefix: Vec<usize> = (0..prefix_len.min(s.len() - 1)).collect();
            let total: f64 = (0..s.len())
                .map(|d| placement_probability(&s, &prefix, d).unwrap())
                .sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}
