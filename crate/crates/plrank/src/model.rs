//! Trainable scoring functions over per-item feature vectors.
//!
//! Two architectures share one interface: a bias-free linear scorer and a
//! sigmoid MLP with a linear head. Training is plain gradient ascent — the
//! estimators in [`crate::gradients`] produce per-item gradients of the
//! expected metric, and [`Scorer::apply_gradient`] backpropagates them into
//! the parameters. Checkpoints are versioned JSON, written with a stable
//! field order so identical models produce identical bytes.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::types::{GradientVector, QueryInstance, ScoreVector, TypeError};

pub const CHECKPOINT_SCHEMA: &str = "plrank.checkpoint.v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint schema {found:?}; this build reads {expected:?}")]
    Schema {
        found: String,
        expected: &'static str,
    },
    #[error("checkpoint is internally inconsistent: {detail}")]
    Corrupt { detail: String },
    #[error("invalid scorer configuration: {detail}")]
    InvalidConfig { detail: String },
    #[error("scorer expects {expected} features per item, got {got}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("update to layer {layer} is not finite; lower the learning rate or rescale features")]
    NonFiniteUpdate { layer: usize },
    #[error(transparent)]
    Type(#[from] TypeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Linear,
    Mlp,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Linear => "linear",
            Architecture::Mlp => "mlp",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, ModelError> {
        match name {
            "linear" => Ok(Architecture::Linear),
            "mlp" => Ok(Architecture::Mlp),
            other => Err(ModelError::Corrupt {
                detail: format!("unknown architecture {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScorerConfig {
    pub architecture: Architecture,
    /// Hidden layer widths; ignored by the linear architecture.
    pub hidden: Vec<usize>,
    pub init_seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Linear,
            hidden: vec![32, 32],
            init_seed: 42,
        }
    }
}

/// Per-feature affine normalization fitted on training data. A feature with
/// zero spread maps to a constant zero and so carries no signal.
#[derive(Debug, Clone)]
pub struct Standardizer<F> {
    means: Vec<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> Standardizer<F> {
    pub fn new(means: Vec<F>, stddevs: Vec<F>) -> Result<Self, TypeError> {
        if means.len() != stddevs.len() {
            return Err(TypeError::LengthMismatch {
                what: "feature standard deviations",
                expected: means.len(),
                got: stddevs.len(),
            });
        }
        for &m in &means {
            if !m.is_finite() {
                return Err(TypeError::NonFinite {
                    what: "feature mean",
                    value: m.as_f64(),
                });
            }
        }
        let mut inv_std = Vec::with_capacity(stddevs.len());
        for &s in &stddevs {
            if !s.is_finite() || s < F::zero() {
                return Err(TypeError::NonFinite {
                    what: "feature standard deviation",
                    value: s.as_f64(),
                });
            }
            inv_std.push(if s > F::zero() { s.recip() } else { F::zero() });
        }
        Ok(Self { means, inv_std })
    }

    fn from_parts(means: Vec<F>, inv_std: Vec<F>) -> Self {
        Self { means, inv_std }
    }

    pub fn feature_count(&self) -> usize {
        self.means.len()
    }

    fn apply_into(&self, raw: &[F], out: &mut Vec<F>) {
        out.clear();
        out.extend(
            raw.iter()
                .zip(self.means.iter().zip(&self.inv_std))
                .map(|(&x, (&m, &inv))| (x - m) * inv),
        );
    }
}

#[derive(Debug, Clone)]
struct Layer<F> {
    in_dim: usize,
    out_dim: usize,
    /// Row-major, `out_dim x in_dim`.
    weights: Vec<F>,
    biases: Vec<F>,
}

impl<F: Scalar> Layer<F> {
    fn glorot(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize, with_bias: bool) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| F::from_f64(rng.random_range(-limit..limit)))
            .collect();
        let biases = if with_bias {
            vec![F::zero(); out_dim]
        } else {
            Vec::new()
        };
        Self {
            in_dim,
            out_dim,
            weights,
            biases,
        }
    }
}

#[derive(Debug, Clone)]
enum Params<F> {
    /// Bias-free dot product with the feature vector.
    Linear { weights: Vec<F> },
    /// Sigmoid hidden layers followed by a linear head.
    Mlp { layers: Vec<Layer<F>> },
}

/// A trainable scoring function: features per item in, one score per item
/// out, plus in-place gradient-ascent updates.
#[derive(Debug, Clone)]
pub struct Scorer<F> {
    feature_count: usize,
    standardizer: Option<Standardizer<F>>,
    params: Params<F>,
}

fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        (F::one() + (-z).exp()).recip()
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

impl<F: Scalar> Scorer<F> {
    pub fn initialize(
        config: &ScorerConfig,
        feature_count: usize,
        standardizer: Option<Standardizer<F>>,
    ) -> Result<Self, ModelError> {
        if feature_count == 0 {
            return Err(ModelError::Type(TypeError::Empty { what: "features" }));
        }
        if let Some(st) = &standardizer {
            if st.feature_count() != feature_count {
                return Err(ModelError::FeatureMismatch {
                    expected: feature_count,
                    got: st.feature_count(),
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let params = match config.architecture {
            Architecture::Linear => Params::Linear {
                weights: Layer::glorot(&mut rng, feature_count, 1, false).weights,
            },
            Architecture::Mlp => {
                let mut layers = Vec::with_capacity(config.hidden.len() + 1);
                let mut in_dim = feature_count;
                for (i, &width) in config.hidden.iter().enumerate() {
                    if width == 0 {
                        return Err(ModelError::InvalidConfig {
                            detail: format!("hidden layer {i} has width 0"),
                        });
                    }
                    layers.push(Layer::glorot(&mut rng, in_dim, width, true));
                    in_dim = width;
                }
                layers.push(Layer::glorot(&mut rng, in_dim, 1, true));
                Params::Mlp { layers }
            }
        };
        Ok(Self {
            feature_count,
            standardizer,
            params,
        })
    }

    pub fn architecture(&self) -> Architecture {
        match self.params {
            Params::Linear { .. } => Architecture::Linear,
            Params::Mlp { .. } => Architecture::Mlp,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    fn check_features(&self, query: &QueryInstance<F>) -> Result<(), ModelError> {
        if query.feature_count() != self.feature_count {
            return Err(ModelError::FeatureMismatch {
                expected: self.feature_count,
                got: query.feature_count(),
            });
        }
        Ok(())
    }

    fn input_into(&self, raw: &[F], out: &mut Vec<F>) {
        match &self.standardizer {
            Some(st) => st.apply_into(raw, out),
            None => {
                out.clear();
                out.extend_from_slice(raw);
            }
        }
    }

    /// Scores every item of `query`. Errors if a score comes out non-finite.
    pub fn score_query(&self, query: &QueryInstance<F>) -> Result<ScoreVector<F>, ModelError> {
        self.check_features(query)?;
        let mut input = Vec::with_capacity(self.feature_count);
        let mut scores = Vec::with_capacity(query.item_count());
        match &self.params {
            Params::Linear { weights } => {
                for d in 0..query.item_count() {
                    self.input_into(query.item_features(d), &mut input);
                    let mut acc = F::zero();
                    for (w, x) in weights.iter().zip(&input) {
                        acc += *w * *x;
                    }
                    scores.push(acc);
                }
            }
            Params::Mlp { layers } => {
                let mut acts = new_activation_buffers(layers);
                for d in 0..query.item_count() {
                    self.input_into(query.item_features(d), &mut input);
                    scores.push(forward_mlp(layers, &input, &mut acts));
                }
            }
        }
        Ok(ScoreVector::new(scores)?)
    }

    /// One gradient-ascent step: adds `learning_rate * Σ_d grad[d] * ∇f(d)`
    /// to the parameters. Leaves the scorer untouched on any error.
    pub fn apply_gradient(
        &mut self,
        query: &QueryInstance<F>,
        grad: &GradientVector<F>,
        learning_rate: F,
    ) -> Result<(), ModelError> {
        self.check_features(query)?;
        if grad.len() != query.item_count() {
            return Err(ModelError::Type(TypeError::LengthMismatch {
                what: "gradient components",
                expected: query.item_count(),
                got: grad.len(),
            }));
        }
        if !learning_rate.is_finite() {
            return Err(ModelError::Type(TypeError::NonFinite {
                what: "learning rate",
                value: learning_rate.as_f64(),
            }));
        }
        let mut input = Vec::with_capacity(self.feature_count);
        match &mut self.params {
            Params::Linear { weights } => {
                let mut update = vec![F::zero(); weights.len()];
                for d in 0..query.item_count() {
                    let g = grad[d];
                    if g == F::zero() {
                        continue;
                    }
                    match &self.standardizer {
                        Some(st) => st.apply_into(query.item_features(d), &mut input),
                        None => {
                            input.clear();
                            input.extend_from_slice(query.item_features(d));
                        }
                    }
                    for (u, x) in update.iter_mut().zip(&input) {
                        *u += g * *x;
                    }
                }
                for (u, &w) in update.iter_mut().zip(weights.iter()) {
                    *u = w + learning_rate * *u;
                    if !u.is_finite() {
                        return Err(ModelError::NonFiniteUpdate { layer: 0 });
                    }
                }
                weights.copy_from_slice(&update);
            }
            Params::Mlp { layers } => {
                let mut updates: Vec<(Vec<F>, Vec<F>)> = layers
                    .iter()
                    .map(|l| (vec![F::zero(); l.weights.len()], vec![F::zero(); l.biases.len()]))
                    .collect();
                let mut acts = new_activation_buffers(layers);
                let widest = layers.iter().map(|l| l.in_dim.max(l.out_dim)).max().unwrap();
                let mut signal = vec![F::zero(); widest];
                let mut delta = vec![F::zero(); widest];
                for d in 0..query.item_count() {
                    let g = grad[d];
                    if g == F::zero() {
                        continue;
                    }
                    match &self.standardizer {
                        Some(st) => st.apply_into(query.item_features(d), &mut input),
                        None => {
                            input.clear();
                            input.extend_from_slice(query.item_features(d));
                        }
                    }
                    forward_mlp(layers, &input, &mut acts);
                    backward_mlp(layers, &acts, g, &mut updates, &mut signal, &mut delta);
                }
                // Stage the new parameters so a non-finite value cannot
                // leave the scorer half-updated.
                for (l, (layer, (wu, bu))) in layers.iter().zip(updates.iter_mut()).enumerate() {
                    for (u, &w) in wu.iter_mut().zip(&layer.weights) {
                        *u = w + learning_rate * *u;
                        if !u.is_finite() {
                            return Err(ModelError::NonFiniteUpdate { layer: l });
                        }
                    }
                    for (u, &b) in bu.iter_mut().zip(&layer.biases) {
                        *u = b + learning_rate * *u;
                        if !u.is_finite() {
                            return Err(ModelError::NonFiniteUpdate { layer: l });
                        }
                    }
                }
                for (layer, (wu, bu)) in layers.iter_mut().zip(updates) {
                    layer.weights = wu;
                    layer.biases = bu;
                }
            }
        }
        Ok(())
    }

    /// Every parameter in a fixed order: per layer, weights then biases.
    pub fn parameters_flat(&self) -> Vec<f64> {
        match &self.params {
            Params::Linear { weights } => weights.iter().map(|w| w.as_f64()).collect(),
            Params::Mlp { layers } => layers
                .iter()
                .flat_map(|l| l.weights.iter().chain(&l.biases))
                .map(|w| w.as_f64())
                .collect(),
        }
    }

    #[cfg(test)]
    fn nudge(&mut self, index: usize, step: f64) {
        let mut remaining = index;
        match &mut self.params {
            Params::Linear { weights } => {
                weights[remaining] += F::from_f64(step);
            }
            Params::Mlp { layers } => {
                for layer in layers {
                    if remaining < layer.weights.len() {
                        layer.weights[remaining] += F::from_f64(step);
                        return;
                    }
                    remaining -= layer.weights.len();
                    if remaining < layer.biases.len() {
                        layer.biases[remaining] += F::from_f64(step);
                        return;
                    }
                    remaining -= layer.biases.len();
                }
                panic!("parameter index {index} out of range");
            }
        }
    }

    pub fn to_checkpoint_json(&self) -> Result<String, ModelError> {
        let layers = match &self.params {
            Params::Linear { weights } => vec![LayerDto {
                in_dim: self.feature_count,
                out_dim: 1,
                weights: weights.iter().map(|w| w.as_f64()).collect(),
                biases: Vec::new(),
            }],
            Params::Mlp { layers } => layers
                .iter()
                .map(|l| LayerDto {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weights: l.weights.iter().map(|w| w.as_f64()).collect(),
                    biases: l.biases.iter().map(|b| b.as_f64()).collect(),
                })
                .collect(),
        };
        let dto = CheckpointDto {
            schema: CHECKPOINT_SCHEMA.to_string(),
            architecture: self.architecture().name().to_string(),
            feature_count: self.feature_count,
            standardizer: self.standardizer.as_ref().map(|st| StandardizerDto {
                means: st.means.iter().map(|m| m.as_f64()).collect(),
                inv_std: st.inv_std.iter().map(|s| s.as_f64()).collect(),
            }),
            layers,
        };
        let mut json = serde_json::to_string_pretty(&dto)?;
        json.push('\n');
        Ok(json)
    }

    pub fn from_checkpoint_json(json: &str) -> Result<Self, ModelError> {
        let dto: CheckpointDto = serde_json::from_str(json)?;
        if dto.schema != CHECKPOINT_SCHEMA {
            return Err(ModelError::Schema {
                found: dto.schema,
                expected: CHECKPOINT_SCHEMA,
            });
        }
        let architecture = Architecture::from_name(&dto.architecture)?;
        if dto.layers.is_empty() {
            return Err(ModelError::Corrupt {
                detail: "checkpoint has no layers".into(),
            });
        }
        if dto.layers[0].in_dim != dto.feature_count {
            return Err(ModelError::Corrupt {
                detail: format!(
                    "first layer expects {} inputs but feature_count is {}",
                    dto.layers[0].in_dim, dto.feature_count
                ),
            });
        }
        if dto.layers.last().unwrap().out_dim != 1 {
            return Err(ModelError::Corrupt {
                detail: "last layer must have one output".into(),
            });
        }
        for (i, pair) in dto.layers.windows(2).enumerate() {
            if pair[1].in_dim != pair[0].out_dim {
                return Err(ModelError::Corrupt {
                    detail: format!(
                        "layer {} emits {} values but layer {} expects {}",
                        i,
                        pair[0].out_dim,
                        i + 1,
                        pair[1].in_dim
                    ),
                });
            }
        }
        for (i, l) in dto.layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim {
                return Err(ModelError::Corrupt {
                    detail: format!(
                        "layer {} should hold {} weights, found {}",
                        i,
                        l.in_dim * l.out_dim,
                        l.weights.len()
                    ),
                });
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(ModelError::Corrupt {
                    detail: format!("layer {i} contains a non-finite parameter"),
                });
            }
        }
        let standardizer = match dto.standardizer {
            None => None,
            Some(st) => {
                if st.means.len() != dto.feature_count || st.inv_std.len() != dto.feature_count {
                    return Err(ModelError::Corrupt {
                        detail: "standardizer width differs from feature_count".into(),
                    });
                }
                if st
                    .means
                    .iter()
                    .chain(&st.inv_std)
                    .any(|v| !v.is_finite())
                {
                    return Err(ModelError::Corrupt {
                        detail: "standardizer contains a non-finite value".into(),
                    });
                }
                Some(Standardizer::from_parts(
                    st.means.iter().map(|&m| F::from_f64(m)).collect(),
                    st.inv_std.iter().map(|&s| F::from_f64(s)).collect(),
                ))
            }
        };
        let params = match architecture {
            Architecture::Linear => {
                if dto.layers.len() != 1 || !dto.layers[0].biases.is_empty() {
                    return Err(ModelError::Corrupt {
                        detail: "linear checkpoints hold exactly one bias-free layer".into(),
                    });
                }
                Params::Linear {
                    weights: dto.layers[0].weights.iter().map(|&w| F::from_f64(w)).collect(),
                }
            }
            Architecture::Mlp => {
                for (i, l) in dto.layers.iter().enumerate() {
                    if l.biases.len() != l.out_dim {
                        return Err(ModelError::Corrupt {
                            detail: format!("layer {i} is missing bias terms"),
                        });
                    }
                }
                Params::Mlp {
                    layers: dto
                        .layers
                        .iter()
                        .map(|l| Layer {
                            in_dim: l.in_dim,
                            out_dim: l.out_dim,
                            weights: l.weights.iter().map(|&w| F::from_f64(w)).collect(),
                            biases: l.biases.iter().map(|&b| F::from_f64(b)).collect(),
                        })
                        .collect(),
                }
            }
        };
        Ok(Self {
            feature_count: dto.feature_count,
            standardizer,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let json = self.to_checkpoint_json()?;
        fs::write(path, json).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let json = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_checkpoint_json(&json)
    }
}

/// One buffer per layer input: `acts[l]` feeds `layers[l]`, `acts[0]` being
/// the (standardized) feature vector.
fn new_activation_buffers<F: Scalar>(layers: &[Layer<F>]) -> Vec<Vec<F>> {
    layers.iter().map(|l| vec![F::zero(); l.in_dim]).collect()
}

fn forward_mlp<F: Scalar>(layers: &[Layer<F>], input: &[F], acts: &mut [Vec<F>]) -> F {
    acts[0].clear();
    acts[0].extend_from_slice(input);
    let head = layers.len() - 1;
    for l in 0..head {
        let layer = &layers[l];
        let (current, rest) = acts.split_at_mut(l + 1);
        let x = &current[l];
        let out = &mut rest[0];
        out.clear();
        for o in 0..layer.out_dim {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut z = layer.biases[o];
            for (w, v) in row.iter().zip(x) {
                z += *w * *v;
            }
            out.push(sigmoid(z));
        }
    }
    let layer = &layers[head];
    let x = &acts[head];
    let mut z = if layer.biases.is_empty() {
        F::zero()
    } else {
        layer.biases[0]
    };
    for (w, v) in layer.weights.iter().zip(x) {
        z += *w * *v;
    }
    z
}

/// Accumulates `g * ∇f` into `updates`, reusing the activations of the
/// forward pass that just ran.
fn backward_mlp<F: Scalar>(
    layers: &[Layer<F>],
    acts: &[Vec<F>],
    g: F,
    updates: &mut [(Vec<F>, Vec<F>)],
    signal: &mut [F],
    delta: &mut [F],
) {
    let head = layers.len() - 1;
    {
        let layer = &layers[head];
        let (wu, bu) = &mut updates[head];
        for (u, x) in wu.iter_mut().zip(&acts[head]) {
            *u += g * *x;
        }
        if !bu.is_empty() {
            bu[0] += g;
        }
        for (sig, &w) in signal.iter_mut().zip(&layer.weights) {
            *sig = g * w;
        }
    }
    for l in (0..head).rev() {
        let layer = &layers[l];
        let a = &acts[l + 1];
        for ((d, &sig), &av) in delta.iter_mut().zip(signal.iter()).zip(a) {
            *d = sig * av * (F::one() - av);
        }
        let (wu, bu) = &mut updates[l];
        for o in 0..layer.out_dim {
            let d = delta[o];
            let row = &mut wu[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (u, x) in row.iter_mut().zip(&acts[l]) {
                *u += d * *x;
            }
            bu[o] += d;
        }
        signal[..layer.in_dim].fill(F::zero());
        for (o, &d) in delta[..layer.out_dim].iter().enumerate() {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (sig, &w) in signal.iter_mut().zip(row) {
                *sig += d * w;
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LayerDto {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StandardizerDto {
    means: Vec<f64>,
    inv_std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDto {
    schema: String,
    architecture: String,
    feature_count: usize,
    standardizer: Option<StandardizerDto>,
    layers: Vec<LayerDto>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query(features: Vec<f64>, feature_count: usize, rho: Vec<f64>) -> QueryInstance<f64> {
        QueryInstance::new("q", features, feature_count, rho).unwrap()
    }

    fn config(architecture: Architecture, hidden: Vec<usize>, seed: u64) -> ScorerConfig {
        ScorerConfig {
            architecture,
            hidden,
            init_seed: seed,
        }
    }

    #[test]
    fn linear_score_is_the_dot_product() {
        let scorer: Scorer<f64> =
            Scorer::initialize(&config(Architecture::Linear, vec![], 5), 3, None).unwrap();
        let w = scorer.parameters_flat();
        assert_eq!(w.len(), 3);
        let q = query(vec![1.0, 2.0, 3.0, 0.0, -1.0, 0.5], 3, vec![0.0, 0.0]);
        let scores = scorer.score_query(&q).unwrap();
        let expect = |x: &[f64]| {
            let mut acc = 0.0;
            for (wi, xi) in w.iter().zip(x) {
                acc += wi * xi;
            }
            acc
        };
        assert_eq!(scores[0], expect(&[1.0, 2.0, 3.0]));
        assert_eq!(scores[1], expect(&[0.0, -1.0, 0.5]));
    }

    #[test]
    fn constant_features_are_silenced_by_the_standardizer() {
        let st = Standardizer::new(vec![0.5, 7.0], vec![2.0, 0.0]).unwrap();
        let scorer: Scorer<f64> =
            Scorer::initialize(&config(Architecture::Mlp, vec![4], 9), 2, Some(st)).unwrap();
        // Queries differing only in the zero-spread feature score identically.
        let a = scorer
            .score_query(&query(vec![1.0, 7.0, -1.0, 7.0], 2, vec![0.0, 0.0]))
            .unwrap();
        let b = scorer
            .score_query(&query(vec![1.0, -3.0, -1.0, 55.0], 2, vec![0.0, 0.0]))
            .unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn initialization_is_bounded_with_zero_biases() {
        let scorer: Scorer<f64> =
            Scorer::initialize(&config(Architecture::Mlp, vec![4, 3], 2), 5, None).unwrap();
        let flat = scorer.parameters_flat();
        // (weights, biases, glorot limit) per layer: 5->4, 4->3, 3->1.
        let sections: [(usize, usize, f64); 3] = [
            (20, 4, (6.0f64 / 9.0).sqrt()),
            (12, 3, (6.0f64 / 7.0).sqrt()),
            (3, 1, (6.0f64 / 4.0).sqrt()),
        ];
        let mut at = 0;
        for (n_weights, n_biases, limit) in sections {
            for &w in &flat[at..at + n_weights] {
                assert!(w.abs() <= limit, "weight {w} exceeds glorot bound {limit}");
            }
            at += n_weights;
            for &b in &flat[at..at + n_biases] {
                assert_eq!(b, 0.0);
            }
            at += n_biases;
        }
        assert_eq!(at, flat.len());
    }

    #[test]
    fn initialization_is_seeded() {
        let cfg = config(Architecture::Mlp, vec![8, 4], 77);
        let a: Scorer<f64> = Scorer::initialize(&cfg, 6, None).unwrap();
        let b: Scorer<f64> = Scorer::initialize(&cfg, 6, None).unwrap();
        assert_eq!(a.parameters_flat(), b.parameters_flat());
        let other: Scorer<f64> =
            Scorer::initialize(&config(Architecture::Mlp, vec![8, 4], 78), 6, None).unwrap();
        assert_ne!(a.parameters_flat(), other.parameters_flat());
    }

    /// The parameter-space step taken by `apply_gradient` with unit learning
    /// rate, recovered by differencing the flattened parameters.
    fn analytic_step(
        scorer: &Scorer<f64>,
        q: &QueryInstance<f64>,
        grad: &GradientVector<f64>,
    ) -> Vec<f64> {
        let before = scorer.parameters_flat();
        let mut stepped = scorer.clone();
        stepped.apply_gradient(q, grad, 1.0).unwrap();
        stepped
            .parameters_flat()
            .iter()
            .zip(&before)
            .map(|(a, b)| a - b)
            .collect()
    }

    fn numeric_step(scorer: &Scorer<f64>, q: &QueryInstance<f64>, g: &[f64], h: f64) -> Vec<f64> {
        let n = scorer.parameters_flat().len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut up = scorer.clone();
            up.nudge(i, h);
            let mut down = scorer.clone();
            down.nudge(i, -h);
            let s_up = up.score_query(q).unwrap();
            let s_down = down.score_query(q).unwrap();
            let mut total = 0.0;
            for d in 0..q.item_count() {
                total += g[d] * (s_up[d] - s_down[d]) / (2.0 * h);
            }
            out.push(total);
        }
        out
    }

    #[test]
    fn update_matches_finite_differences() {
        let g = vec![0.3, -1.2, 0.7];
        let grad = GradientVector::new(g.clone()).unwrap();
        let features = vec![
            0.5, -1.0, 2.0, 0.1, //
            1.5, 0.3, -0.7, 0.9, //
            -0.2, 0.8, 0.4, -1.1,
        ];
        let q = query(features, 4, vec![0.0; 3]);
        let st = Standardizer::new(vec![0.1, 0.0, 0.5, -0.2], vec![1.5, 1.0, 0.8, 2.0]).unwrap();

        for cfg in [
            config(Architecture::Linear, vec![], 3),
            config(Architecture::Mlp, vec![3, 2], 3),
        ] {
            let scorer: Scorer<f64> = Scorer::initialize(&cfg, 4, Some(st.clone())).unwrap();
            let analytic = analytic_step(&scorer, &q, &grad);
            let numeric = numeric_step(&scorer, &q, &g, 1e-4);
            for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                assert!(
                    (a - n).abs() <= 1e-6 + 1e-4 * a.abs().max(n.abs()),
                    "{:?} parameter {i}: analytic {a} vs numeric {n}",
                    cfg.architecture
                );
            }
        }
    }

    #[test]
    fn checkpoints_round_trip_exactly() {
        let st = Standardizer::new(vec![1.0, -2.0], vec![3.0, 0.0]).unwrap();
        for cfg in [
            config(Architecture::Linear, vec![], 11),
            config(Architecture::Mlp, vec![5, 3], 11),
        ] {
            let scorer: Scorer<f64> = Scorer::initialize(&cfg, 2, Some(st.clone())).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.json");
            scorer.save(&path).unwrap();
            let loaded: Scorer<f64> = Scorer::load(&path).unwrap();
            assert_eq!(loaded.architecture(), cfg.architecture);
            assert_eq!(loaded.feature_count(), 2);
            assert_eq!(loaded.parameters_flat(), scorer.parameters_flat());
            let q = query(vec![0.3, 0.6, -0.9, 1.2], 2, vec![0.0, 0.0]);
            let a = scorer.score_query(&q).unwrap();
            let b = loaded.score_query(&q).unwrap();
            assert_eq!(a[0], b[0]);
            assert_eq!(a[1], b[1]);
            // Same model, same bytes.
            assert_eq!(
                scorer.to_checkpoint_json().unwrap(),
                loaded.to_checkpoint_json().unwrap()
            );
        }
    }

    #[test]
    fn checkpoint_schema_and_shape_are_enforced() {
        let scorer: Scorer<f64> =
            Scorer::initialize(&config(Architecture::Mlp, vec![2], 1), 3, None).unwrap();
        let json = scorer.to_checkpoint_json().unwrap();

        let other_schema = json.replace("plrank.checkpoint.v1", "plrank.checkpoint.v9");
        assert!(matches!(
            Scorer::<f64>::from_checkpoint_json(&other_schema),
            Err(ModelError::Schema { .. })
        ));

        let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
        value["layers"][0]["weights"] = serde_json::json!([1.0]);
        let truncated = serde_json::to_string(&value).unwrap();
        assert!(matches!(
            Scorer::<f64>::from_checkpoint_json(&truncated),
            Err(ModelError::Corrupt { .. })
        ));

        assert!(matches!(
            Scorer::<f64>::from_checkpoint_json("{"),
            Err(ModelError::Json(_))
        ));
    }

    #[test]
    fn feature_width_is_enforced() {
        let scorer: Scorer<f64> =
            Scorer::initialize(&config(Architecture::Linear, vec![], 1), 3, None).unwrap();
        let q = query(vec![1.0, 2.0], 2, vec![0.0]);
        assert!(matches!(
            scorer.score_query(&q),
            Err(ModelError::FeatureMismatch {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn overflowing_update_is_rejected_without_side_effects() {
        let mut scorer: Scorer<f64> =
            Scorer::initialize(&config(Architecture::Linear, vec![], 1), 2, None).unwrap();
        let before = scorer.parameters_flat();
        let q = query(vec![1e200, 0.0], 2, vec![0.0]);
        let grad = GradientVector::new(vec![1e200]).unwrap();
        let err = scorer.apply_gradient(&q, &grad, 1e200).unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteUpdate { layer: 0 }));
        assert_eq!(scorer.parameters_flat(), before);
    }

    #[test]
    fn f32_scorer_smoke() {
        let scorer: Scorer<f32> =
            Scorer::initialize(&config(Architecture::Mlp, vec![4], 6), 2, None).unwrap();
        let q = QueryInstance::new("q", vec![0.5f32, -0.5, 1.0, 0.25], 2, vec![1.0f32, 0.0])
            .unwrap();
        let scores = scorer.score_query(&q).unwrap();
        assert!(scores.iter().all(|s| s.is_finite()));
        let mut trained = scorer.clone();
        trained
            .apply_gradient(&q, &GradientVector::new(vec![0.5f32, -0.5]).unwrap(), 0.1)
            .unwrap();
        assert_ne!(trained.parameters_flat(), scorer.parameters_flat());
    }
}
