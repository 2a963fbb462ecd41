//! Top-k ranking metrics: weight schemes, per-ranking values, and
//! dataset-level NDCG.
//!
//! A metric is a vector of non-negative rank weights θ_1..θ_K; the value of
//! a ranking is Σ_k θ_k · ρ(item at rank k). NDCG is normalized at the
//! dataset level: the sum of model DCG over queries divided by the sum of
//! ideal DCG, not a mean of per-query ratios.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::sampling::partial_top_k;
use crate::scalar::Scalar;
use crate::types::{effective_cutoff, MetricWeights, SampledRanking, TypeError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("query sets differ: {detail}")]
    KeyMismatch { detail: String },
    #[error("query {query_id}: {detail}")]
    ValueOutOfRange { query_id: String, detail: String },
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// DCG weights: θ_k = 1 / log2(1 + k) for ranks 1..=cutoff.
///
/// The base-2 logarithm is computed as ln(x)/ln(2) in double precision so
/// the weights are bit-stable across platforms.
pub fn dcg_weights<F: Scalar>(cutoff: usize) -> Result<MetricWeights<F>, TypeError> {
    if cutoff == 0 {
        return Err(TypeError::ZeroCutoff);
    }
    let ln2 = std::f64::consts::LN_2;
    let weights = (1..=cutoff)
        .map(|k| F::from_f64(ln2 / (1.0 + k as f64).ln()))
        .collect();
    MetricWeights::new(weights)
}

/// Precision weights: θ_k = 1 for ranks 1..=cutoff.
pub fn precision_weights<F: Scalar>(cutoff: usize) -> Result<MetricWeights<F>, TypeError> {
    if cutoff == 0 {
        return Err(TypeError::ZeroCutoff);
    }
    MetricWeights::new(vec![F::one(); cutoff])
}

/// Metric value of one ranking: Σ_k θ_k · ρ(y_k) over the filled ranks.
pub fn metric_value<F: Scalar>(
    ranking: &SampledRanking,
    rho: &[F],
    theta: &MetricWeights<F>,
) -> Result<F, MetricError> {
    if rho.len() != ranking.domain_size() {
        return Err(MetricError::Type(TypeError::LengthMismatch {
            what: "relevances",
            expected: ranking.domain_size(),
            got: rho.len(),
        }));
    }
    let depth = ranking.len().min(theta.cutoff());
    let weights = theta.weights();
    let mut value = F::zero();
    for k in 0..depth {
        value += weights[k] * rho[ranking.items()[k]];
    }
    Ok(value)
}

/// Best achievable metric value: items sorted by descending relevance,
/// ties broken by lower index.
pub fn ideal_metric<F: Scalar>(rho: &[F], theta: &MetricWeights<F>) -> Result<F, MetricError> {
    let k_eff = effective_cutoff(rho.len(), theta.cutoff())?;
    let ranking = SampledRanking::new(partial_top_k(rho, k_eff), rho.len())?;
    metric_value(&ranking, rho, theta)
}

/// Dataset-level evaluation: per-query DCG, the ideal total, and their
/// ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport<F> {
    pub cutoff: usize,
    pub per_query_dcg: BTreeMap<String, F>,
    pub ideal_dcg_total: F,
    pub dataset_ndcg: F,
    /// Set when the ideal total is zero (no relevant items anywhere); the
    /// NDCG is then defined as 0.
    pub degenerate: bool,
}

#[derive(Serialize)]
struct ReportDto<'a> {
    schema: &'static str,
    cutoff: usize,
    dataset_ndcg: f64,
    ideal_dcg_total: f64,
    degenerate: bool,
    queries: BTreeMap<&'a str, f64>,
}

impl<F: Scalar> EvaluationReport<F> {
    /// Stable JSON rendering of the report.
    pub fn to_json_string(&self) -> String {
        let dto = ReportDto {
            schema: "plrank.eval.v1",
            cutoff: self.cutoff,
            dataset_ndcg: self.dataset_ndcg.as_f64(),
            ideal_dcg_total: self.ideal_dcg_total.as_f64(),
            degenerate: self.degenerate,
            queries: self
                .per_query_dcg
                .iter()
                .map(|(k, &v)| (k.as_str(), v.as_f64()))
                .collect(),
        };
        let mut out = serde_json::to_string_pretty(&dto).expect("report serializes");
        out.push('\n');
        out
    }
}

/// Combines per-query model and ideal metric values into a dataset-level
/// report: Σ model / Σ ideal.
///
/// Both maps must cover the same queries, and each model value must lie in
/// [0, ideal] up to a 1e-9 slack.
pub fn dataset_ndcg<F: Scalar>(
    model_dcg: &BTreeMap<String, F>,
    ideal_dcg: &BTreeMap<String, F>,
    cutoff: usize,
) -> Result<EvaluationReport<F>, MetricError> {
    if cutoff == 0 {
        return Err(MetricError::Type(TypeError::ZeroCutoff));
    }
    if model_dcg.len() != ideal_dcg.len()
        || !model_dcg.keys().eq(ideal_dcg.keys())
    {
        let only_model: Vec<&str> = model_dcg
            .keys()
            .filter(|k| !ideal_dcg.contains_key(*k))
            .map(String::as_str)
            .collect();
        let only_ideal: Vec<&str> = ideal_dcg
            .keys()
            .filter(|k| !model_dcg.contains_key(*k))
            .map(String::as_str)
            .collect();
        return Err(MetricError::KeyMismatch {
            detail: format!(
                "{} only in model map, {} only in ideal map",
                only_model.join(","),
                only_ideal.join(",")
            ),
        });
    }
    let slack = F::from_f64(1e-9);
    let mut model_total = F::zero();
    let mut ideal_total = F::zero();
    for (query_id, &model) in model_dcg {
        let ideal = ideal_dcg[query_id];
        if model < -slack {
            return Err(MetricError::ValueOutOfRange {
                query_id: query_id.clone(),
                detail: format!("model DCG {model} is negative"),
            });
        }
        if model > ideal + slack {
            return Err(MetricError::ValueOutOfRange {
                query_id: query_id.clone(),
                detail: format!("model DCG {model} exceeds ideal DCG {ideal}"),
            });
        }
        model_total += model;
        ideal_total += ideal;
    }
    let degenerate = ideal_total <= F::zero();
    let dataset_ndcg = if degenerate {
        F::zero()
    } else {
        model_total / ideal_total
    };
    Ok(EvaluationReport {
        cutoff,
        per_query_dcg: model_dcg.clone(),
        ideal_dcg_total: ideal_total,
        dataset_ndcg,
        degenerate,
    })
}
