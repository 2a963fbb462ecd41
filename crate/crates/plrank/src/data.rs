//! Dataset loading, synthesis, and serialization.
//!
//! The on-disk format is the SVMLight/LETOR line grammar used by the public
//! ranking collections:
//!
//! ```text
//! <label> qid:<qid> (<fid>:<value>)* (# <comment>)?
//! ```
//!
//! Labels are non-negative integers, feature ids are 1-based, and anything
//! from the first `#` on is comment. Files may be gzip-compressed; the magic
//! bytes decide. Parse errors carry the 1-based line number and the 0-based
//! byte offset of the offending token within its line.
//!
//! The synthetic generator builds learnable instances from a hidden linear
//! model, so training runs have a known signal to recover.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::sampling::{partial_top_k, RngStream};
use crate::scalar::Scalar;
use crate::types::{transform_labels, LabelTransform, QueryInstance, TypeError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("label must be a non-negative integer, found {found:?}")]
    Label { found: String },
    #[error("expected qid:<id>, found {found:?}")]
    Qid { found: String },
    #[error("malformed feature token {found:?}")]
    Feature { found: String },
    #[error("feature ids are 1-based, found {found}")]
    FeatureId { found: i64 },
    #[error("duplicate feature id {fid}")]
    DuplicateFeature { fid: u32 },
    #[error("feature {fid} has a non-finite value")]
    NonFiniteFeature { fid: u32 },
    #[error("missing {what}")]
    Missing { what: &'static str },
}

/// Parse failure local to one line: `offset` is the byte position of the
/// offending token, counted from the start of the line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("byte {offset}: {kind}")]
pub struct LineParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{offset}: {kind}")]
    Parse {
        path: String,
        line: usize,
        offset: usize,
        kind: ParseErrorKind,
    },
    #[error("{path} contains no data rows")]
    Empty { path: String },
    #[error("invalid dataset request: {detail}")]
    InvalidArgument { detail: String },
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// One parsed data row, features still sparse and in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLine<F> {
    pub label: i64,
    pub qid: String,
    pub features: Vec<(u32, F)>,
}

fn tokens(content: &str) -> impl Iterator<Item = (usize, &str)> {
    let bytes = content.as_bytes();
    let mut at = 0;
    std::iter::from_fn(move || {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if at >= bytes.len() {
            return None;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        Some((start, &content[start..at]))
    })
}

/// Parses one data line of the grammar above. The comment part, if any, is
/// ignored.
pub fn parse_line<F: Scalar>(line: &str) -> Result<ParsedLine<F>, LineParseError> {
    let content = match line.find('#') {
        Some(hash) => &line[..hash],
        None => line,
    };
    let mut toks = tokens(content);

    let (label_at, label_tok) = toks.next().ok_or(LineParseError {
        offset: 0,
        kind: ParseErrorKind::Missing { what: "label" },
    })?;
    let label: i64 = match label_tok.parse() {
        Ok(l) if l >= 0 => l,
        _ => {
            return Err(LineParseError {
                offset: label_at,
                kind: ParseErrorKind::Label {
                    found: label_tok.to_string(),
                },
            })
        }
    };

    let (qid_at, qid_tok) = toks.next().ok_or(LineParseError {
        offset: content.len(),
        kind: ParseErrorKind::Missing { what: "qid field" },
    })?;
    let qid = match qid_tok.strip_prefix("qid:") {
        Some(id) if !id.is_empty() => id.to_string(),
        _ => {
            return Err(LineParseError {
                offset: qid_at,
                kind: ParseErrorKind::Qid {
                    found: qid_tok.to_string(),
                },
            })
        }
    };

    let mut features = Vec::new();
    let mut seen = HashSet::new();
    for (at, tok) in toks {
        let malformed = || LineParseError {
            offset: at,
            kind: ParseErrorKind::Feature {
                found: tok.to_string(),
            },
        };
        let (fid_str, value_str) = tok.split_once(':').ok_or_else(malformed)?;
        let fid: i64 = fid_str.parse().map_err(|_| malformed())?;
        if fid <= 0 {
            return Err(LineParseError {
                offset: at,
                kind: ParseErrorKind::FeatureId { found: fid },
            });
        }
        let fid = fid as u32;
        let value: f64 = value_str.parse().map_err(|_| malformed())?;
        if !value.is_finite() {
            return Err(LineParseError {
                offset: at,
                kind: ParseErrorKind::NonFiniteFeature { fid },
            });
        }
        if !seen.insert(fid) {
            return Err(LineParseError {
                offset: at,
                kind: ParseErrorKind::DuplicateFeature { fid },
            });
        }
        features.push((fid, F::from_f64(value)));
    }
    Ok(ParsedLine {
        label,
        qid,
        features,
    })
}

/// Per-feature first and second moments of a split, population form.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats<F> {
    pub means: Vec<F>,
    pub stddevs: Vec<F>,
}

/// All queries of one file (or one synthetic draw), densified to a shared
/// feature width.
#[derive(Debug, Clone)]
pub struct DatasetSplit<F> {
    queries: Vec<QueryInstance<F>>,
    /// Original integer labels, parallel to `queries`; relevances in the
    /// instances are these after the split's label transform.
    raw_labels: Vec<Vec<i64>>,
    feature_count: usize,
    source_path: String,
    stats: Option<FeatureStats<F>>,
    merge_warnings: usize,
}

impl<F: Scalar> DatasetSplit<F> {
    pub fn queries(&self) -> &[QueryInstance<F>] {
        &self.queries
    }

    pub fn raw_labels(&self) -> &[Vec<i64>] {
        &self.raw_labels
    }

    /// Width of the densified feature matrices (the maximum feature id seen).
    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    /// Number of times a query id continued after other ids had interrupted
    /// its block. Such rows are merged into the earlier query.
    pub fn merge_warnings(&self) -> usize {
        self.merge_warnings
    }

    pub fn stats(&self) -> Option<&FeatureStats<F>> {
        self.stats.as_ref()
    }

    /// Population mean and standard deviation per feature, cached on the
    /// split. Meant for the training split only; other splits reuse its
    /// result.
    pub fn compute_feature_stats(&mut self) -> &FeatureStats<F> {
        let f = self.feature_count;
        let mut count = 0usize;
        let mut means = vec![F::zero(); f];
        for q in &self.queries {
            count += q.item_count();
            for d in 0..q.item_count() {
                for (m, &x) in means.iter_mut().zip(q.item_features(d)) {
                    *m += x;
                }
            }
        }
        let n = F::from_f64(count as f64);
        for m in &mut means {
            *m /= n;
        }
        let mut vars = vec![F::zero(); f];
        for q in &self.queries {
            for d in 0..q.item_count() {
                for ((v, &m), &x) in vars.iter_mut().zip(&means).zip(q.item_features(d)) {
                    let delta = x - m;
                    *v += delta * delta;
                }
            }
        }
        let stddevs = vars.into_iter().map(|v| (v / n).sqrt()).collect();
        self.stats = Some(FeatureStats { means, stddevs });
        self.stats.as_ref().unwrap()
    }

    /// Widens every feature matrix to `target` columns (new columns are
    /// zero), so splits loaded from different files can share one scorer.
    pub fn harmonize_feature_count(&mut self, target: usize) -> Result<(), DataError> {
        if target < self.feature_count {
            return Err(DataError::InvalidArgument {
                detail: format!(
                    "cannot shrink feature count from {} to {target}",
                    self.feature_count
                ),
            });
        }
        if target == self.feature_count {
            return Ok(());
        }
        let old = self.feature_count;
        for q in &mut self.queries {
            let items = q.item_count();
            let mut widened = vec![F::zero(); items * target];
            for d in 0..items {
                widened[d * target..d * target + old].copy_from_slice(q.item_features(d));
            }
            *q = QueryInstance::new(
                q.query_id().to_string(),
                widened,
                target,
                q.relevances().to_vec(),
            )?;
        }
        self.feature_count = target;
        Ok(())
    }

    /// The same split with relevances rebuilt from the raw labels under a
    /// different transform.
    pub fn with_label_transform(&self, transform: LabelTransform) -> Result<Self, DataError> {
        let mut out = self.clone();
        for (q, labels) in out.queries.iter_mut().zip(&self.raw_labels) {
            *q = QueryInstance::new(
                q.query_id().to_string(),
                q.features().to_vec(),
                self.feature_count,
                transform_labels(labels, transform)?,
            )?;
        }
        Ok(out)
    }

    /// Renders the split back into the line grammar. Zero-valued features
    /// are omitted; comments are not preserved.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (q, labels) in self.queries.iter().zip(&self.raw_labels) {
            for (d, label) in labels.iter().enumerate() {
                let _ = write!(out, "{} qid:{}", label, q.query_id());
                for (j, &v) in q.item_features(d).iter().enumerate() {
                    if v != F::zero() {
                        let _ = write!(out, " {}:{}", j + 1, v);
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Loads one split, transparently gunzipping when the magic bytes match.
pub fn load_split<F: Scalar>(
    path: &Path,
    transform: LabelTransform,
) -> Result<DatasetSplit<F>, DataError> {
    let shown = path.display().to_string();
    let io_err = |source| DataError::Io {
        path: shown.clone(),
        source,
    };
    let raw = fs::read(path).map_err(io_err)?;
    let text = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut s = String::new();
        GzDecoder::new(raw.as_slice())
            .read_to_string(&mut s)
            .map_err(io_err)?;
        s
    } else {
        String::from_utf8(raw).map_err(|e| DataError::Io {
            path: shown.clone(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?
    };
    parse_split_text(&text, &shown, transform)
}

/// Parses already-read split text; `source` only labels diagnostics.
pub fn parse_split_text<F: Scalar>(
    text: &str,
    source: &str,
    transform: LabelTransform,
) -> Result<DatasetSplit<F>, DataError> {
    struct Builder<F> {
        qid: String,
        labels: Vec<i64>,
        rows: Vec<Vec<(u32, F)>>,
    }
    let mut builders: Vec<Builder<F>> = Vec::new();
    let mut by_qid: HashMap<String, usize> = HashMap::new();
    let mut last: Option<usize> = None;
    let mut merge_warnings = 0;
    let mut max_fid: u32 = 0;

    for (line_index, line) in text.lines().enumerate() {
        let content = match line.find('#') {
            Some(hash) => &line[..hash],
            None => line,
        };
        if content.trim().is_empty() {
            continue;
        }
        let parsed: ParsedLine<F> = parse_line(line).map_err(|e| DataError::Parse {
            path: source.to_string(),
            line: line_index + 1,
            offset: e.offset,
            kind: e.kind,
        })?;
        for &(fid, _) in &parsed.features {
            max_fid = max_fid.max(fid);
        }
        let at = match by_qid.get(&parsed.qid) {
            Some(&i) => {
                if last != Some(i) {
                    merge_warnings += 1;
                }
                i
            }
            None => {
                builders.push(Builder {
                    qid: parsed.qid.clone(),
                    labels: Vec::new(),
                    rows: Vec::new(),
                });
                by_qid.insert(parsed.qid, builders.len() - 1);
                builders.len() - 1
            }
        };
        builders[at].labels.push(parsed.label);
        builders[at].rows.push(parsed.features);
        last = Some(at);
    }

    if builders.is_empty() {
        return Err(DataError::Empty {
            path: source.to_string(),
        });
    }
    let feature_count = max_fid as usize;
    let mut queries = Vec::with_capacity(builders.len());
    let mut raw_labels = Vec::with_capacity(builders.len());
    for b in builders {
        let items = b.rows.len();
        let mut dense = vec![F::zero(); items * feature_count];
        for (d, row) in b.rows.iter().enumerate() {
            for &(fid, v) in row {
                dense[d * feature_count + (fid as usize - 1)] = v;
            }
        }
        let relevances = transform_labels(&b.labels, transform)?;
        queries.push(QueryInstance::new(b.qid, dense, feature_count, relevances)?);
        raw_labels.push(b.labels);
    }
    Ok(DatasetSplit {
        queries,
        raw_labels,
        feature_count,
        source_path: source.to_string(),
        stats: None,
        merge_warnings,
    })
}

/// Shape and seed of a synthetic draw.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub queries: usize,
    pub items_per_query: usize,
    pub features: usize,
    /// Fraction of each query's items given a positive label.
    pub relevant_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), DataError> {
        let positive = [
            ("queries", self.queries),
            ("items_per_query", self.items_per_query),
            ("features", self.features),
        ];
        for (what, value) in positive {
            if value == 0 {
                return Err(DataError::InvalidArgument {
                    detail: format!("{what} must be positive"),
                });
            }
        }
        if !self.relevant_fraction.is_finite()
            || !(0.0..=1.0).contains(&self.relevant_fraction)
        {
            return Err(DataError::InvalidArgument {
                detail: format!(
                    "relevant_fraction must lie in [0, 1], got {}",
                    self.relevant_fraction
                ),
            });
        }
        Ok(())
    }
}

fn hidden_model(spec: &SyntheticSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(RngStream::new(spec.seed).derived_seed("synth:model"));
    (0..spec.features).map(|_| rng.sample(StandardNormal)).collect()
}

fn synthesize_split<F: Scalar>(
    spec: &SyntheticSpec,
    prefix: &str,
    n_queries: usize,
    hidden: &[f64],
) -> Result<DatasetSplit<F>, DataError> {
    let stream = RngStream::new(spec.seed);
    let d = spec.items_per_query;
    let f = spec.features;
    // Noise at half the hidden utility's standard deviation keeps labels
    // learnable but not trivially separable.
    let noise_sd = 0.5 * (f as f64).sqrt();
    let relevant = (spec.relevant_fraction * d as f64).round() as usize;
    let n_grade2 = relevant.div_ceil(2);

    let mut queries = Vec::with_capacity(n_queries);
    let mut raw_labels = Vec::with_capacity(n_queries);
    for q in 0..n_queries {
        let qid = format!("{prefix}{q}");
        let mut rng =
            ChaCha8Rng::seed_from_u64(stream.derived_seed(&format!("synth:item:{qid}")));
        let mut features = Vec::with_capacity(d * f);
        let mut utility = Vec::with_capacity(d);
        for _ in 0..d {
            let mut u = 0.0;
            for &w in hidden {
                let x: f64 = rng.sample(StandardNormal);
                features.push(F::from_f64(x));
                u += w * x;
            }
            let noise: f64 = rng.sample(StandardNormal);
            utility.push(u + noise_sd * noise);
        }
        let mut labels = vec![0i64; d];
        if relevant > 0 {
            let order = partial_top_k(&utility, relevant.min(d));
            for (pos, &item) in order.iter().enumerate() {
                labels[item] = if pos < n_grade2 { 2 } else { 1 };
            }
        }
        let relevances = transform_labels(&labels, LabelTransform::Identity)?;
        queries.push(QueryInstance::new(qid, features, f, relevances)?);
        raw_labels.push(labels);
    }
    Ok(DatasetSplit {
        queries,
        raw_labels,
        feature_count: f,
        source_path: format!("synthetic:{prefix}seed{}", spec.seed),
        stats: None,
        merge_warnings: 0,
    })
}

/// One synthetic split drawn from a hidden linear utility model.
pub fn synthesize_dataset<F: Scalar>(spec: &SyntheticSpec) -> Result<DatasetSplit<F>, DataError> {
    synthesize_dataset_with_model(spec).map(|(split, _)| split)
}

/// [`synthesize_dataset`] plus the hidden model's weights, for tests that
/// need the generating truth.
pub fn synthesize_dataset_with_model<F: Scalar>(
    spec: &SyntheticSpec,
) -> Result<(DatasetSplit<F>, Vec<f64>), DataError> {
    spec.validate()?;
    let hidden = hidden_model(spec);
    let split = synthesize_split(spec, "q", spec.queries, &hidden)?;
    Ok((split, hidden))
}

/// Train/validation/test splits sharing one hidden model, so a scorer fitted
/// on the first generalizes to the others.
pub fn synthesize_suite<F: Scalar>(
    spec: &SyntheticSpec,
    validation_queries: usize,
    test_queries: usize,
) -> Result<[DatasetSplit<F>; 3], DataError> {
    spec.validate()?;
    if validation_queries == 0 || test_queries == 0 {
        return Err(DataError::InvalidArgument {
            detail: "validation and test splits need at least one query".into(),
        });
    }
    let hidden = hidden_model(spec);
    Ok([
        synthesize_split(spec, "train-", spec.queries, &hidden)?,
        synthesize_split(spec, "val-", validation_queries, &hidden)?,
        synthesize_split(spec, "test-", test_queries, &hidden)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{dcg_weights, ideal_metric, metric_value};
    use crate::sampling::top_k_by_score;
    use crate::types::ScoreVector;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn parse64(line: &str) -> Result<ParsedLine<f64>, LineParseError> {
        parse_line(line)
    }

    #[test]
    fn grammar_examples_parse() {
        let p = parse64("2 qid:10 1:0.5 7:1.0 # doc-a").unwrap();
        assert_eq!(p.label, 2);
        assert_eq!(p.qid, "10");
        assert_eq!(p.features, vec![(1, 0.5), (7, 1.0)]);

        let p = parse64("0 qid:3").unwrap();
        assert_eq!((p.label, p.qid.as_str()), (0, "3"));
        assert!(p.features.is_empty());

        let p = parse64("1 qid:3 2:1e-3").unwrap();
        assert_eq!(p.features, vec![(2, 0.001)]);
    }

    #[test]
    fn parse_errors_carry_exact_offsets() {
        let err = parse64("2 qid:4 2:1 2:3").unwrap_err();
        assert_eq!(err.offset, 12);
        assert_eq!(err.kind, ParseErrorKind::DuplicateFeature { fid: 2 });

        let err = parse64("1 qid:3 abc").unwrap_err();
        assert_eq!(err.offset, 8);
        assert_eq!(
            err.kind,
            ParseErrorKind::Feature {
                found: "abc".into()
            }
        );

        let err = parse64("x qid:1").unwrap_err();
        assert_eq!(err.offset, 0);
        assert!(matches!(err.kind, ParseErrorKind::Label { .. }));

        let err = parse64("-1 qid:1 1:2.0").unwrap_err();
        assert_eq!(err.offset, 0);
        assert!(matches!(err.kind, ParseErrorKind::Label { .. }));

        let err = parse64("1 qid:1 0:2.0").unwrap_err();
        assert_eq!(err.offset, 8);
        assert_eq!(err.kind, ParseErrorKind::FeatureId { found: 0 });

        let err = parse64("1 doc:1").unwrap_err();
        assert_eq!(err.offset, 2);
        assert!(matches!(err.kind, ParseErrorKind::Qid { .. }));

        let err = parse64("1").unwrap_err();
        assert!(matches!(
            err.kind,
            ParseErrorKind::Missing { what: "qid field" }
        ));

        let err = parse64("").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Missing { what: "label" }));

        let err = parse64("1 qid:1 3:1e999").unwrap_err();
        assert_eq!(err.offset, 8);
        assert_eq!(err.kind, ParseErrorKind::NonFiniteFeature { fid: 3 });

        // Offsets survive a leading-whitespace shift.
        let err = parse64("  1 qid:3 abc").unwrap_err();
        assert_eq!(err.offset, 10);
    }

    #[test]
    fn loading_groups_rows_by_query() {
        let text = "2 qid:a 1:1.0\n1 qid:a 2:0.5\n0 qid:a\n";
        let split: DatasetSplit<f64> =
            parse_split_text(text, "inline", LabelTransform::Identity).unwrap();
        assert_eq!(split.queries().len(), 1);
        let q = &split.queries()[0];
        assert_eq!(q.item_count(), 3);
        assert_eq!(q.relevances(), &[2.0, 1.0, 0.0]);
        assert_eq!(split.feature_count(), 2);
        // Densified rows with zero defaults, in file order.
        assert_eq!(q.item_features(0), &[1.0, 0.0]);
        assert_eq!(q.item_features(1), &[0.0, 0.5]);
        assert_eq!(q.item_features(2), &[0.0, 0.0]);
        assert_eq!(split.merge_warnings(), 0);
    }

    #[test]
    fn interrupted_query_blocks_merge_with_a_warning() {
        let text = "1 qid:a 1:1.0\n0 qid:b 1:2.0\n2 qid:a 1:3.0\n";
        let split: DatasetSplit<f64> =
            parse_split_text(text, "inline", LabelTransform::Identity).unwrap();
        assert_eq!(split.queries().len(), 2);
        assert_eq!(split.merge_warnings(), 1);
        assert_eq!(split.queries()[0].item_count(), 2);
        assert_eq!(split.queries()[1].item_count(), 1);
        // Merged rows keep file order.
        assert_eq!(split.queries()[0].relevances(), &[1.0, 2.0]);
        assert_eq!(split.raw_labels()[0], vec![1, 2]);
    }

    #[test]
    fn comments_blank_lines_and_crlf_are_tolerated() {
        let text = "# header\n\n2 qid:1 1:0.5\r\n   # indented comment\n0 qid:1\r\n";
        let split: DatasetSplit<f64> =
            parse_split_text(text, "inline", LabelTransform::Identity).unwrap();
        assert_eq!(split.queries().len(), 1);
        assert_eq!(split.queries()[0].item_count(), 2);
        assert_eq!(split.queries()[0].item_features(0), &[0.5]);
    }

    #[test]
    fn split_level_errors_name_line_and_source() {
        let text = "1 qid:1 1:0.5\n1 qid:1 nope\n";
        let err = parse_split_text::<f64>(text, "bad.txt", LabelTransform::Identity).unwrap_err();
        match err {
            DataError::Parse {
                path,
                line,
                offset,
                kind,
            } => {
                assert_eq!(path, "bad.txt");
                assert_eq!(line, 2);
                assert_eq!(offset, 8);
                assert!(matches!(kind, ParseErrorKind::Feature { .. }));
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        assert!(matches!(
            parse_split_text::<f64>("# nothing\n", "e.txt", LabelTransform::Identity),
            Err(DataError::Empty { .. })
        ));
    }

    #[test]
    fn gzip_files_load_identically() {
        let dir = tempfile::tempdir().unwrap();
        let text = "2 qid:7 1:0.25 3:-1.5\n0 qid:7 2:4.0\n1 qid:8 1:1.0\n";

        let plain = dir.path().join("split.txt");
        fs::write(&plain, text).unwrap();
        let zipped = dir.path().join("split.txt.gz");
        let mut enc =
            flate2::write::GzEncoder::new(fs::File::create(&zipped).unwrap(), Default::default());
        enc.write_all(text.as_bytes()).unwrap();
        enc.finish().unwrap();

        let a: DatasetSplit<f64> = load_split(&plain, LabelTransform::Identity).unwrap();
        let b: DatasetSplit<f64> = load_split(&zipped, LabelTransform::Identity).unwrap();
        assert_eq!(a.queries(), b.queries());
        assert_eq!(a.feature_count(), b.feature_count());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err =
            load_split::<f64>(Path::new("/no/such/file.txt"), LabelTransform::Identity)
                .unwrap_err();
        assert!(matches!(err, DataError::Io { .. }));
    }

    #[test]
    fn label_transform_rebuilds_relevances() {
        let text = "0 qid:1 1:1.0\n1 qid:1 1:2.0\n3 qid:1 1:3.0\n";
        let split: DatasetSplit<f64> =
            parse_split_text(text, "inline", LabelTransform::Identity).unwrap();
        assert_eq!(split.queries()[0].relevances(), &[0.0, 1.0, 3.0]);
        let gained = split.with_label_transform(LabelTransform::ExponentialGain).unwrap();
        assert_eq!(gained.queries()[0].relevances(), &[0.0, 1.0, 7.0]);
        // Raw labels and features are untouched.
        assert_eq!(gained.raw_labels(), split.raw_labels());
        assert_eq!(gained.queries()[0].features(), split.queries()[0].features());
    }

    #[test]
    fn serialization_round_trips() {
        let text = "2 qid:a 1:0.5 3:1.25\n0 qid:a\n1 qid:b 2:-3.75\n";
        let split: DatasetSplit<f64> =
            parse_split_text(text, "inline", LabelTransform::Identity).unwrap();
        let rendered = split.serialize();
        let again: DatasetSplit<f64> =
            parse_split_text(&rendered, "inline", LabelTransform::Identity).unwrap();
        assert_eq!(split.queries(), again.queries());
        assert_eq!(split.raw_labels(), again.raw_labels());
        assert_eq!(split.feature_count(), again.feature_count());
    }

    #[test]
    fn feature_stats_match_hand_computation() {
        let text = "0 qid:1 1:1.0 2:5.0\n0 qid:1 1:3.0 2:5.0\n0 qid:2 1:5.0 2:5.0\n";
        let mut split: DatasetSplit<f64> =
            parse_split_text(text, "inline", LabelTransform::Identity).unwrap();
        let stats = split.compute_feature_stats().clone();
        assert_eq!(stats.means, vec![3.0, 5.0]);
        // Population variance of {1,3,5} is 8/3.
        assert!((stats.stddevs[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(stats.stddevs[1], 0.0);
        assert_eq!(split.stats().unwrap().means, stats.means);
    }

    #[test]
    fn harmonize_widens_but_never_shrinks() {
        let text = "0 qid:1 1:1.0 2:2.0\n";
        let mut split: DatasetSplit<f64> =
            parse_split_text(text, "inline", LabelTransform::Identity).unwrap();
        split.harmonize_feature_count(4).unwrap();
        assert_eq!(split.feature_count(), 4);
        assert_eq!(split.queries()[0].item_features(0), &[1.0, 2.0, 0.0, 0.0]);
        assert!(matches!(
            split.harmonize_feature_count(3),
            Err(DataError::InvalidArgument { .. })
        ));
    }

    fn spec(queries: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            queries,
            items_per_query: 20,
            features: 5,
            relevant_fraction: 0.3,
            seed,
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_shaped() {
        let a: DatasetSplit<f64> = synthesize_dataset(&spec(10, 7)).unwrap();
        let b: DatasetSplit<f64> = synthesize_dataset(&spec(10, 7)).unwrap();
        assert_eq!(a.queries(), b.queries());
        assert_eq!(a.queries().len(), 10);
        assert_eq!(a.feature_count(), 5);
        for (q, labels) in a.queries().iter().zip(a.raw_labels()) {
            assert_eq!(q.item_count(), 20);
            // 0.3 * 20 rounds to 6 relevant items: 3 of grade 2, 3 of grade 1.
            assert_eq!(labels.iter().filter(|&&l| l == 2).count(), 3);
            assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 3);
        }
        let other: DatasetSplit<f64> = synthesize_dataset(&spec(10, 8)).unwrap();
        assert_ne!(a.queries(), other.queries());
    }

    #[test]
    fn zero_relevant_fraction_gives_all_zero_labels() {
        let mut s = spec(4, 3);
        s.relevant_fraction = 0.0;
        let split: DatasetSplit<f64> = synthesize_dataset(&s).unwrap();
        assert!(split.raw_labels().iter().flatten().all(|&l| l == 0));
    }

    #[test]
    fn invalid_synthesis_parameters_are_rejected() {
        let mut s = spec(0, 1);
        assert!(matches!(
            synthesize_dataset::<f64>(&s),
            Err(DataError::InvalidArgument { .. })
        ));
        s = spec(2, 1);
        s.relevant_fraction = 1.5;
        assert!(matches!(
            synthesize_dataset::<f64>(&s),
            Err(DataError::InvalidArgument { .. })
        ));
    }

    /// Dataset NDCG@5 of a fixed scoring rule over a split.
    fn ndcg_at_5(split: &DatasetSplit<f64>, mut score: impl FnMut(&QueryInstance<f64>) -> Vec<f64>) -> f64 {
        let theta = dcg_weights(5).unwrap();
        let mut model_total = 0.0;
        let mut ideal_total = 0.0;
        for q in split.queries() {
            let s = ScoreVector::new(score(q)).unwrap();
            let ranking = top_k_by_score(&s, 5).unwrap();
            model_total += metric_value(&ranking, q.relevances(), &theta).unwrap();
            ideal_total += ideal_metric(q.relevances(), &theta).unwrap();
        }
        model_total / ideal_total
    }

    #[test]
    fn hidden_model_beats_random_scoring_on_its_own_data() {
        let (split, hidden): (DatasetSplit<f64>, Vec<f64>) =
            synthesize_dataset_with_model(&spec(40, 11)).unwrap();
        let by_hidden = ndcg_at_5(&split, |q| {
            (0..q.item_count())
                .map(|d| {
                    q.item_features(d)
                        .iter()
                        .zip(&hidden)
                        .map(|(x, w)| x * w)
                        .sum()
                })
                .collect()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let by_chance = ndcg_at_5(&split, |q| {
            (0..q.item_count()).map(|_| rng.random_range(-1.0..1.0)).collect()
        });
        assert!(
            by_hidden > by_chance + 0.15,
            "hidden model {by_hidden} should clearly beat random {by_chance}"
        );
    }

    #[test]
    fn suite_shares_the_hidden_model_across_splits() {
        let [train, val, test]: [DatasetSplit<f64>; 3] =
            synthesize_suite(&spec(12, 9), 5, 4).unwrap();
        assert_eq!(train.queries().len(), 12);
        assert_eq!(val.queries().len(), 5);
        assert_eq!(test.queries().len(), 4);
        // Distinct query ids per split.
        assert!(train.queries()[0].query_id().starts_with("train-"));
        assert!(val.queries()[0].query_id().starts_with("val-"));
        assert!(test.queries()[0].query_id().starts_with("test-"));
        // A scorer read off the train split's generator transfers to val:
        // the shared hidden model scores well on both.
        let (_, hidden): (DatasetSplit<f64>, _) =
            synthesize_dataset_with_model(&spec(12, 9)).unwrap();
        let score = |q: &QueryInstance<f64>| -> Vec<f64> {
            (0..q.item_count())
                .map(|d| {
                    q.item_features(d)
                        .iter()
                        .zip(&hidden)
                        .map(|(x, w)| x * w)
                        .sum()
                })
                .collect()
        };
        assert!(ndcg_at_5(&val, score) > 0.6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// parse → serialize → parse is the identity on splits.
        #[test]
        fn round_trip_is_lossless(
            rows in proptest::collection::vec(
                (
                    0i64..5,
                    0usize..3, // query choice
                    proptest::collection::btree_map(1u32..9, -100.0f64..100.0, 0..6),
                ),
                1..20,
            )
        ) {
            let mut text = String::new();
            for (label, q, features) in &rows {
                let _ = write!(text, "{label} qid:q{q}");
                for (fid, value) in features {
                    // Zero values would be dropped by serialization; keep
                    // the fixture away from them.
                    let v = if value.abs() < 1e-6 { 1.0 } else { *value };
                    let _ = write!(text, " {fid}:{v}");
                }
                text.push('\n');
            }
            let first: DatasetSplit<f64> =
                parse_split_text(&text, "prop", LabelTransform::Identity).unwrap();
            let again: DatasetSplit<f64> =
                parse_split_text(&first.serialize(), "prop", LabelTransform::Identity).unwrap();
            prop_assert_eq!(first.queries(), again.queries());
            prop_assert_eq!(first.raw_labels(), again.raw_labels());
            prop_assert_eq!(first.feature_count(), again.feature_count());
        }
    }
}
