//! Shared domain types and their validity rules.
//!
//! Constructors reject NaN/Inf values, negative relevances, and out-of-range
//! or duplicate item indices, so the numeric modules can assume well-formed
//! inputs throughout.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TypeError {
    #[error("{what} must be finite, got {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("{what} must not be empty")]
    Empty { what: &'static str },
    #[error("relevance at index {index} is negative")]
    NegativeRelevance { index: usize },
    #[error("label at index {index} is negative")]
    NegativeLabel { index: usize },
    #[error("expected {expected} {what}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("item index {index} out of range for a domain of {domain} items")]
    IndexOutOfRange { index: usize, domain: usize },
    #[error("item {index} appears more than once in the ranking")]
    DuplicateItem { index: usize },
    #[error("cutoff must be at least 1")]
    ZeroCutoff,
    #[error("metric weight at rank {rank} is negative")]
    NegativeWeight { rank: usize },
}

fn check_finite<F: Scalar>(what: &'static str, values: &[F]) -> Result<(), TypeError> {
    for &v in values {
        if !v.is_finite() {
            return Err(TypeError::NonFinite {
                what,
                value: v.as_f64(),
            });
        }
    }
    Ok(())
}

/// One query: an item set with dense per-item features and relevances.
///
/// Features are stored row-major, `item_count x feature_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryInstance<F> {
    query_id: String,
    features: Vec<F>,
    relevances: Vec<F>,
    item_count: usize,
    feature_count: usize,
}

impl<F: Scalar> QueryInstance<F> {
    pub fn new(
        query_id: impl Into<String>,
        features: Vec<F>,
        feature_count: usize,
        relevances: Vec<F>,
    ) -> Result<Self, TypeError> {
        let item_count = relevances.len();
        if item_count == 0 {
            return Err(TypeError::Empty { what: "item set" });
        }
        if features.len() != item_count * feature_count {
            return Err(TypeError::LengthMismatch {
                what: "feature values",
                expected: item_count * feature_count,
                got: features.len(),
            });
        }
        check_finite("feature value", &features)?;
        check_finite("relevance", &relevances)?;
        if let Some(index) = relevances.iter().position(|&r| r < F::zero()) {
            return Err(TypeError::NegativeRelevance { index });
        }
        Ok(Self {
            query_id: query_id.into(),
            features,
            relevances,
            item_count,
            feature_count,
        })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn relevances(&self) -> &[F] {
        &self.relevances
    }

    /// Row-major feature matrix, `item_count x feature_count`.
    pub fn features(&self) -> &[F] {
        &self.features
    }

    pub fn item_features(&self, item: usize) -> &[F] {
        let start = item * self.feature_count;
        &self.features[start..start + self.feature_count]
    }
}

/// Per-item scores; finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<F>(Vec<F>);

impl<F: Scalar> ScoreVector<F> {
    pub fn new(scores: Vec<F>) -> Result<Self, TypeError> {
        if scores.is_empty() {
            return Err(TypeError::Empty {
                what: "score vector",
            });
        }
        check_finite("score", &scores)?;
        Ok(Self(scores))
    }
}

impl<F> std::ops::Deref for ScoreVector<F> {
    type Target = [F];

    fn deref(&self) -> &[F] {
        &self.0
    }
}

/// Per-item gradient estimate; finite by construction (signs are free).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector<F>(Vec<F>);

impl<F: Scalar> GradientVector<F> {
    pub fn new(values: Vec<F>) -> Result<Self, TypeError> {
        if values.is_empty() {
            return Err(TypeError::Empty {
                what: "gradient vector",
            });
        }
        check_finite("gradient component", &values)?;
        Ok(Self(values))
    }

    pub fn into_vec(self) -> Vec<F> {
        self.0
    }
}

impl<F> std::ops::Deref for GradientVector<F> {
    type Target = [F];

    fn deref(&self) -> &[F] {
        &self.0
    }
}

/// Rank weights `weights[k]` for 1-based rank `k+1`; the cutoff is the
/// weight count. Weights are finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricWeights<F> {
    weights: Vec<F>,
}

impl<F: Scalar> MetricWeights<F> {
    pub fn new(weights: Vec<F>) -> Result<Self, TypeError> {
        if weights.is_empty() {
            return Err(TypeError::ZeroCutoff);
        }
        check_finite("metric weight", &weights)?;
        if let Some(rank) = weights.iter().position(|&w| w < F::zero()) {
            return Err(TypeError::NegativeWeight { rank: rank + 1 });
        }
        Ok(Self { weights })
    }

    pub fn cutoff(&self) -> usize {
        self.weights.len()
    }

    /// Weight for 0-based rank index `k`, i.e. the weight of rank `k+1`.
    pub fn weights(&self) -> &[F] {
        &self.weights
    }
}

/// A top-k ranking: distinct item indices in rank order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledRanking {
    items: Vec<usize>,
    /// item -> 1-based rank; 0 marks an unplaced item.
    inverse_rank: Vec<usize>,
}

impl SampledRanking {
    pub fn new(items: Vec<usize>, domain_size: usize) -> Result<Self, TypeError> {
        if items.is_empty() {
            return Err(TypeError::Empty { what: "ranking" });
        }
        if items.len() > domain_size {
            return Err(TypeError::LengthMismatch {
                what: "ranked items",
                expected: domain_size,
                got: items.len(),
            });
        }
        let mut inverse_rank = vec![0usize; domain_size];
        for (pos, &item) in items.iter().enumerate() {
            if item >= domain_size {
                return Err(TypeError::IndexOutOfRange {
                    index: item,
                    domain: domain_size,
                });
            }
            if inverse_rank[item] != 0 {
                return Err(TypeError::DuplicateItem { index: item });
            }
            inverse_rank[item] = pos + 1;
        }
        Ok(Self {
            items,
            inverse_rank,
        })
    }

    /// Item indices in rank order, best first.
    pub fn items(&self) -> &[usize] {
        &self.items
    }

    /// Number of placed items (`min(K, D)` when drawn with cutoff K).
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn domain_size(&self) -> usize {
        self.inverse_rank.len()
    }

    /// 1-based rank of `item`, or `None` if it was not placed.
    pub fn rank_of(&self, item: usize) -> Option<usize> {
        match self.inverse_rank.get(item) {
            Some(&0) | None => None,
            Some(&rank) => Some(rank),
        }
    }

    /// 1-based rank with 0 standing for "unplaced"; the estimator hot loops
    /// branch on this directly.
    #[inline]
    pub(crate) fn raw_ranks(&self) -> &[usize] {
        &self.inverse_rank
    }
}

/// Number of ranks actually filled: `min(item_count, cutoff)`.
pub fn effective_cutoff(item_count: usize, cutoff: usize) -> Result<usize, TypeError> {
    if item_count == 0 {
        return Err(TypeError::Empty { what: "item set" });
    }
    if cutoff == 0 {
        return Err(TypeError::ZeroCutoff);
    }
    Ok(item_count.min(cutoff))
}

/// How raw integer labels become relevances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelTransform {
    /// Relevance = label.
    Identity,
    /// Relevance = 2^label - 1, the usual graded-gain mapping.
    ExponentialGain,
}

/// Maps raw integer labels to relevances. Labels must be non-negative.
pub fn transform_labels<F: Scalar>(
    labels: &[i64],
    transform: LabelTransform,
) -> Result<Vec<F>, TypeError> {
    labels
        .iter()
        .enumerate()
        .map(|(index, &label)| {
            if label < 0 {
                return Err(TypeError::NegativeLabel { index });
            }
            let value = match transform {
                LabelTransform::Identity => label as f64,
                LabelTransform::ExponentialGain => (label as f64).exp2() - 1.0,
            };
            if !value.is_finite() {
                return Err(TypeError::NonFinite {
                    what: "transformed label",
                    value,
                });
            }
            Ok(F::from_f64(value))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_instance_validates_shapes_and_values() {
        let q = QueryInstance::new("q1", vec![1.0, 2.0, 3.0, 4.0], 2, vec![1.0, 0.0]).unwrap();
        assert_eq!(q.item_count(), 2);
        assert_eq!(q.item_features(1), &[3.0, 4.0]);

        assert!(matches!(
            QueryInstance::<f64>::new("q1", vec![], 2, vec![]),
            Err(TypeError::Empty { .. })
        ));
        assert!(matches!(
            QueryInstance::new("q1", vec![1.0], 2, vec![1.0]),
            Err(TypeError::LengthMismatch { .. })
        ));
        assert!(matches!(
            QueryInstance::new("q1", vec![f64::NAN, 0.0], 2, vec![1.0]),
            Err(TypeError::NonFinite { .. })
        ));
        assert!(matches!(
            QueryInstance::new("q1", vec![1.0, 2.0], 2, vec![-0.5]),
            Err(TypeError::NegativeRelevance { index: 0 })
        ));
    }

    #[test]
    fn score_vector_rejects_non_finite() {
        assert!(ScoreVector::new(vec![0.0, -3.5]).is_ok());
        assert!(matches!(
            ScoreVector::new(vec![f64::INFINITY]),
            Err(TypeError::NonFinite { .. })
        ));
        assert!(matches!(
            ScoreVector::<f64>::new(vec![]),
            Err(TypeError::Empty { .. })
        ));
    }

    #[test]
    fn ranking_validates_indices() {
        let r = SampledRanking::new(vec![2, 0], 3).unwrap();
        assert_eq!(r.rank_of(2), Some(1));
        assert_eq!(r.rank_of(0), Some(2));
        assert_eq!(r.rank_of(1), None);
        assert_eq!(r.domain_size(), 3);

        assert!(matches!(
            SampledRanking::new(vec![3], 3),
            Err(TypeError::IndexOutOfRange { index: 3, .. })
        ));
        assert!(matches!(
            SampledRanking::new(vec![1, 1], 3),
            Err(TypeError::DuplicateItem { index: 1 })
        ));
        assert!(matches!(
            SampledRanking::new(vec![0, 1, 2, 1], 3),
            Err(TypeError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn effective_cutoff_truncates() {
        assert_eq!(effective_cutoff(3, 10).unwrap(), 3);
        assert_eq!(effective_cutoff(5, 3).unwrap(), 3);
        assert!(matches!(
            effective_cutoff(5, 0),
            Err(TypeError::ZeroCutoff)
        ));
        assert!(matches!(
            effective_cutoff(0, 3),
            Err(TypeError::Empty { .. })
        ));
    }

    #[test]
    fn label_transforms() {
        let identity: Vec<f64> = transform_labels(&[0, 1, 4], LabelTransform::Identity).unwrap();
        assert_eq!(identity, vec![0.0, 1.0, 4.0]);

        let gain: Vec<f64> = transform_labels(&[0, 1, 4], LabelTransform::ExponentialGain).unwrap();
        assert_eq!(gain, vec![0.0, 1.0, 15.0]);

        assert!(matches!(
            transform_labels::<f64>(&[2, -1], LabelTransform::Identity),
            Err(TypeError::NegativeLabel { index: 1 })
        ));
    }

    #[test]
    fn metric_weights_validate() {
        let w = MetricWeights::new(vec![1.0, 0.5]).unwrap();
        assert_eq!(w.cutoff(), 2);
        assert!(matches!(
            MetricWeights::<f64>::new(vec![]),
            Err(TypeError::ZeroCutoff)
        ));
        assert!(matches!(
            MetricWeights::new(vec![1.0, -0.1]),
            Err(TypeError::NegativeWeight { rank: 2 })
        ));
    }
}
