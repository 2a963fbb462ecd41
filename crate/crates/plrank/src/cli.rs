//! Command-line front end: `train`, `eval`, `bench`, and `gradcheck`.
//!
//! Every run is a pure function of its flags, the seed, and the input files:
//! query order, ranking samples, and parameter initialization all come from
//! named substreams of one seeded generator, and execution is single-threaded,
//! so outputs are reproducible byte for byte (`--no-timing` additionally
//! blanks the wall-clock columns, which no seed can pin down).
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical error, 4 suite
//! failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{
    load_split, synthesize_dataset, synthesize_suite, DataError, DatasetSplit, SyntheticSpec,
};
use crate::gradients::{plrank2_estimate, plrank3_estimate, GradientError};
use crate::metrics::{
    dataset_ndcg, dcg_weights, ideal_metric, metric_value, precision_weights, EvaluationReport,
    MetricError,
};
use crate::model::{Architecture, ModelError, Scorer, ScorerConfig, Standardizer};
use crate::oracle::{exact_gradient, finite_difference_gradient, OracleError};
use crate::sampling::{gumbel_sample_rankings, top_k_by_score, RngStream, SamplingError};
use crate::types::{GradientVector, LabelTransform, MetricWeights, ScoreVector, TypeError};

type Real = f64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("numerical failure at epoch {epoch}, query {query_id:?}: {detail}")]
    Numerical {
        epoch: u64,
        query_id: String,
        detail: String,
    },
    #[error("{failures} of {cases} gradient-check cases failed")]
    Suite { failures: usize, cases: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Output { .. } => 2,
            CliError::Model(e) => match e {
                ModelError::InvalidConfig { .. } => 1,
                ModelError::NonFiniteUpdate { .. } | ModelError::Type(_) => 3,
                _ => 2,
            },
            CliError::Gradient(_)
            | CliError::Sampling(_)
            | CliError::Metric(_)
            | CliError::Oracle(_)
            | CliError::Type(_)
            | CliError::Numerical { .. } => 3,
            CliError::Suite { .. } => 4,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "plrank",
    version,
    about = "Listwise learning-to-rank with Plackett-Luce models and sampled gradient estimators"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a scorer by gradient ascent on a sampled ranking metric.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split with deterministic ranking.
    Eval(EvalArgs),
    /// Time the estimators over a grid of cutoffs and sample counts.
    Bench(BenchArgs),
    /// Run randomized estimator-correctness suites against the oracle.
    Gradcheck(GradcheckArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    Plrank2,
    Plrank3,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Plrank2 => "plrank2",
            Algo::Plrank3 => "plrank3",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Dcg,
    Precision,
}

impl MetricKind {
    fn weights(self, cutoff: usize) -> Result<MetricWeights<Real>, TypeError> {
        match self {
            MetricKind::Dcg => dcg_weights(cutoff),
            MetricKind::Precision => precision_weights(cutoff),
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchKind {
    Linear,
    Mlp,
}

impl From<ArchKind> for Architecture {
    fn from(kind: ArchKind) -> Self {
        match kind {
            ArchKind::Linear => Architecture::Linear,
            ArchKind::Mlp => Architecture::Mlp,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelTransformKind {
    /// Relevance = label.
    Identity,
    /// Relevance = 2^label - 1.
    Exponential,
}

impl From<LabelTransformKind> for LabelTransform {
    fn from(kind: LabelTransformKind) -> Self {
        match kind {
            LabelTransformKind::Identity => LabelTransform::Identity,
            LabelTransformKind::Exponential => LabelTransform::ExponentialGain,
        }
    }
}

/// Flags of the built-in synthetic data generator, shared by the
/// subcommands that can run without input files.
#[derive(Args, Debug, Clone)]
pub struct SyntheticArgs {
    /// Generate data from the built-in synthetic suite instead of files.
    #[arg(long)]
    pub synthetic: bool,
    /// Synthetic: number of training queries.
    #[arg(long, default_value_t = 60)]
    pub synth_queries: usize,
    /// Synthetic: items per query.
    #[arg(long, default_value_t = 100)]
    pub synth_items: usize,
    /// Synthetic: features per item.
    #[arg(long, default_value_t = 10)]
    pub synth_features: usize,
    /// Synthetic: fraction of relevant items per query.
    #[arg(long, default_value_t = 0.2)]
    pub synth_relevant: f64,
}

impl SyntheticArgs {
    fn validate(&self) -> Result<(), CliError> {
        for (what, value) in [
            ("--synth-queries", self.synth_queries),
            ("--synth-items", self.synth_items),
            ("--synth-features", self.synth_features),
        ] {
            if value == 0 {
                return Err(CliError::Usage(format!("{what} must be positive")));
            }
        }
        if !self.synth_relevant.is_finite() || !(0.0..=1.0).contains(&self.synth_relevant) {
            return Err(CliError::Usage(
                "--synth-relevant must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            queries: self.synth_queries,
            items_per_query: self.synth_items,
            features: self.synth_features,
            relevant_fraction: self.synth_relevant,
            seed,
        }
    }
}

/// Validation and test splits get a third of the training query count each.
fn synth_side_queries(train_queries: usize) -> usize {
    (train_queries / 3).max(1)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training split (LETOR/SVMLight text, optionally gzipped).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation split; defaults to the training split.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SyntheticArgs,
    /// Gradient estimator.
    #[arg(long, value_enum, default_value_t = Algo::Plrank3)]
    pub algo: Algo,
    /// Metric cutoff K.
    #[arg(long, default_value_t = 5)]
    pub cutoff: usize,
    /// Sampled rankings per query per epoch.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: u64,
    /// Learning rate for gradient ascent.
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Training objective weights.
    #[arg(long, value_enum, default_value_t = MetricKind::Dcg)]
    pub metric: MetricKind,
    #[arg(long, value_enum, default_value_t = ArchKind::Mlp)]
    pub arch: ArchKind,
    /// MLP hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "32,32")]
    pub hidden: Vec<usize>,
    /// Seed for initialization, shuffling, and ranking samples.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Mapping from integer labels to relevances.
    #[arg(long, value_enum, default_value_t = LabelTransformKind::Identity)]
    pub label_transform: LabelTransformKind,
    /// Output directory for the epoch CSV and the checkpoint.
    #[arg(long, default_value = "plrank-out")]
    pub out: PathBuf,
    /// Write zeros in the timing columns so identical runs produce
    /// byte-identical CSVs.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split to evaluate (LETOR/SVMLight text, optionally gzipped).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SyntheticArgs,
    #[arg(long, default_value_t = 5)]
    pub cutoff: usize,
    /// Seed of the synthetic suite (must match the training run's).
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = LabelTransformKind::Identity)]
    pub label_transform: LabelTransformKind,
    /// Report file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Split to train over (LETOR/SVMLight text, optionally gzipped).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SyntheticArgs,
    /// Estimators to time.
    #[arg(long = "algo", value_enum, value_delimiter = ',', default_values_t = [Algo::Plrank3, Algo::Plrank2])]
    pub algos: Vec<Algo>,
    /// Cutoff grid.
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 25, 50, 100])]
    pub cutoffs: Vec<usize>,
    /// Sample-count grid.
    #[arg(long, value_delimiter = ',', default_values_t = [100usize])]
    pub samples: Vec<usize>,
    /// Measured epochs per configuration (one warm-up epoch always runs
    /// first and is excluded).
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, value_enum, default_value_t = ArchKind::Linear)]
    pub arch: ArchKind,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// CSV file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Randomized cases per suite.
    #[arg(long, default_value_t = 25)]
    pub cases: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Largest instance for the enumeration oracle (at most 8).
    #[arg(long, default_value_t = 6)]
    pub max_items: usize,
    /// Sampled rankings per case in the unbiasedness suite.
    #[arg(long, default_value_t = 20000)]
    pub samples_for_estimate: usize,
}

/// Parses the process arguments, runs the chosen subcommand, and returns the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version surface here; they print to stdout and
            // exit 0, everything else is a usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(args) => train_run(&args).map(|_| ()),
        Command::Eval(args) => eval_run(&args).map(|_| ()),
        Command::Bench(args) => bench_run(&args).map(|_| ()),
        Command::Gradcheck(args) => gradcheck_run(&args).map(|_| ()),
    }
}

/// One row of the per-epoch training report. Epoch 0 is the untrained
/// baseline; its timing columns are zero because no training work ran.
#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: u64,
    pub wall_s: f64,
    pub grad_s: f64,
    pub train_metric: f64,
    pub val_ndcg: f64,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub rows: Vec<EpochRow>,
    pub csv_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

fn apply_transform(
    split: DatasetSplit<Real>,
    transform: LabelTransform,
) -> Result<DatasetSplit<Real>, CliError> {
    if transform == LabelTransform::Identity {
        Ok(split)
    } else {
        Ok(split.with_label_transform(transform)?)
    }
}

fn load_train_val(
    args: &TrainArgs,
    transform: LabelTransform,
) -> Result<(DatasetSplit<Real>, DatasetSplit<Real>), CliError> {
    if args.synth.synthetic {
        if args.train.is_some() || args.validation.is_some() {
            return Err(CliError::Usage(
                "--synthetic cannot be combined with --train/--validation".into(),
            ));
        }
        args.synth.validate()?;
        let side = synth_side_queries(args.synth.synth_queries);
        let [train, val, _] = synthesize_suite(&args.synth.spec(args.seed), side, side)?;
        Ok((
            apply_transform(train, transform)?,
            apply_transform(val, transform)?,
        ))
    } else {
        let train_path = args
            .train
            .as_deref()
            .ok_or_else(|| CliError::Usage("provide --train <path> or --synthetic".into()))?;
        let train = load_split(train_path, transform)?;
        let val = match &args.validation {
            Some(path) => load_split(path, transform)?,
            None => train.clone(),
        };
        Ok((train, val))
    }
}

fn numerical(epoch: u64, query_id: &str, detail: impl std::fmt::Display) -> CliError {
    CliError::Numerical {
        epoch,
        query_id: query_id.to_string(),
        detail: detail.to_string(),
    }
}

fn estimate(
    algo: Algo,
    scores: &ScoreVector<Real>,
    rho: &[Real],
    theta: &MetricWeights<Real>,
    rankings: &[crate::types::SampledRanking],
) -> Result<GradientVector<Real>, GradientError> {
    match algo {
        Algo::Plrank2 => plrank2_estimate(scores, rho, theta, rankings),
        Algo::Plrank3 => plrank3_estimate(scores, rho, theta, rankings),
    }
}

/// Mean sampled metric over one epoch-indexed draw, without touching the
/// model: the baseline `train_metric` before any update.
fn sampled_train_metric(
    scorer: &Scorer<Real>,
    split: &DatasetSplit<Real>,
    theta: &MetricWeights<Real>,
    cutoff: usize,
    samples: usize,
    stream: &RngStream,
    epoch: u64,
) -> Result<f64, CliError> {
    let mut total = 0.0;
    for q in split.queries() {
        let scores = scorer.score_query(q)?;
        let mut rng = stream.sampler(q.query_id(), epoch, 0);
        let rankings = gumbel_sample_rankings(&scores, cutoff, samples, &mut rng)?;
        let mut query_total = 0.0;
        for ranking in &rankings {
            query_total += metric_value(ranking, q.relevances(), theta)?;
        }
        total += query_total / samples as f64;
    }
    Ok(total / split.queries().len() as f64)
}

/// Deterministic dataset NDCG of `scorer` over `split`:
/// Σ DCG@cutoff / Σ ideal DCG@cutoff, ranking by descending score.
fn deterministic_ndcg(
    scorer: &Scorer<Real>,
    split: &DatasetSplit<Real>,
    theta: &MetricWeights<Real>,
    cutoff: usize,
    ideal_total: f64,
) -> Result<f64, CliError> {
    let mut model_total = 0.0;
    for q in split.queries() {
        let scores = scorer.score_query(q)?;
        let ranking = top_k_by_score(&scores, cutoff)?;
        model_total += metric_value(&ranking, q.relevances(), theta)?;
    }
    Ok(if ideal_total > 0.0 {
        model_total / ideal_total
    } else {
        0.0
    })
}

fn ideal_total(split: &DatasetSplit<Real>, theta: &MetricWeights<Real>) -> Result<f64, CliError> {
    let mut total = 0.0;
    for q in split.queries() {
        total += ideal_metric(q.relevances(), theta)?;
    }
    Ok(total)
}

pub fn train_run(args: &TrainArgs) -> Result<TrainSummary, CliError> {
    if args.cutoff == 0 {
        return Err(CliError::Usage("--cutoff must be at least 1".into()));
    }
    if args.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    if !args.lr.is_finite() || args.lr <= 0.0 {
        return Err(CliError::Usage("--lr must be a positive number".into()));
    }
    if args.arch == ArchKind::Mlp && args.hidden.contains(&0) {
        return Err(CliError::Usage("--hidden widths must be positive".into()));
    }

    let transform = args.label_transform.into();
    let (mut train, mut val) = load_train_val(args, transform)?;
    let width = train.feature_count().max(val.feature_count());
    train.harmonize_feature_count(width)?;
    val.harmonize_feature_count(width)?;

    let stream = RngStream::new(args.seed);
    let stats = train.compute_feature_stats().clone();
    let standardizer = Standardizer::new(stats.means, stats.stddevs)?;
    let config = ScorerConfig {
        architecture: args.arch.into(),
        hidden: args.hidden.clone(),
        init_seed: stream.derived_seed("model-init"),
    };
    let mut scorer: Scorer<Real> = Scorer::initialize(&config, width, Some(standardizer))?;

    let theta = args.metric.weights(args.cutoff)?;
    let ndcg_theta = dcg_weights(args.cutoff)?;
    let val_ideal = ideal_total(&val, &ndcg_theta)?;

    let mut rows = Vec::with_capacity(args.epochs as usize + 1);
    if args.epochs >= 1 {
        let row = EpochRow {
            epoch: 0,
            wall_s: 0.0,
            grad_s: 0.0,
            train_metric: sampled_train_metric(
                &scorer,
                &train,
                &theta,
                args.cutoff,
                args.samples,
                &stream,
                0,
            )?,
            val_ndcg: deterministic_ndcg(&scorer, &val, &ndcg_theta, args.cutoff, val_ideal)?,
        };
        println!(
            "epoch {:>3}: train {:.4}  val-ndcg {:.4}  (baseline)",
            row.epoch, row.train_metric, row.val_ndcg
        );
        rows.push(row);
    }

    for epoch in 1..=args.epochs {
        let epoch_start = Instant::now();
        let mut order: Vec<usize> = (0..train.queries().len()).collect();
        order.shuffle(&mut stream.shuffler(epoch));

        let mut grad_s = 0.0;
        let mut metric_total = 0.0;
        for &qi in &order {
            let q = &train.queries()[qi];
            let scores = scorer.score_query(q)?;
            let grad_start = Instant::now();
            let mut rng = stream.sampler(q.query_id(), epoch, 0);
            let rankings = gumbel_sample_rankings(&scores, args.cutoff, args.samples, &mut rng)?;
            let grad = estimate(args.algo, &scores, q.relevances(), &theta, &rankings)
                .map_err(|e| numerical(epoch, q.query_id(), e))?;
            grad_s += grad_start.elapsed().as_secs_f64();

            let mut query_total = 0.0;
            for ranking in &rankings {
                query_total += metric_value(ranking, q.relevances(), &theta)?;
            }
            metric_total += query_total / args.samples as f64;

            scorer.apply_gradient(q, &grad, args.lr).map_err(|e| match e {
                ModelError::NonFiniteUpdate { .. } => numerical(epoch, q.query_id(), e),
                other => CliError::Model(other),
            })?;
        }

        let row = EpochRow {
            epoch,
            wall_s: epoch_start.elapsed().as_secs_f64(),
            grad_s,
            train_metric: metric_total / train.queries().len() as f64,
            val_ndcg: deterministic_ndcg(&scorer, &val, &ndcg_theta, args.cutoff, val_ideal)?,
        };
        println!(
            "epoch {:>3}: train {:.4}  val-ndcg {:.4}  wall {:.2}s",
            row.epoch, row.train_metric, row.val_ndcg, row.wall_s
        );
        rows.push(row);
    }

    fs::create_dir_all(&args.out).map_err(|source| CliError::Output {
        path: args.out.display().to_string(),
        source,
    })?;
    let csv_path = args.out.join("epochs.csv");
    write_epoch_csv(&csv_path, &rows, args.no_timing)?;
    let checkpoint_path = args.out.join("checkpoint.json");
    scorer.save(&checkpoint_path)?;
    println!(
        "wrote {} and {}",
        csv_path.display(),
        checkpoint_path.display()
    );
    Ok(TrainSummary {
        rows,
        csv_path,
        checkpoint_path,
    })
}

fn write_epoch_csv(path: &Path, rows: &[EpochRow], no_timing: bool) -> Result<(), CliError> {
    let mut out = String::from("# schema: plrank.epochs.v1\nepoch,wall_s,grad_s,train_metric,val_ndcg\n");
    for row in rows {
        let (wall, grad) = if no_timing {
            (0.0, 0.0)
        } else {
            (row.wall_s, row.grad_s)
        };
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            row.epoch, wall, grad, row.train_metric, row.val_ndcg
        );
    }
    fs::write(path, out).map_err(|source| CliError::Output {
        path: path.display().to_string(),
        source,
    })
}

/// Scores a split with a checkpoint and reports dataset NDCG.
pub fn eval_run(args: &EvalArgs) -> Result<EvaluationReport<Real>, CliError> {
    if args.cutoff == 0 {
        return Err(CliError::Usage("--cutoff must be at least 1".into()));
    }
    let scorer: Scorer<Real> = Scorer::load(&args.checkpoint)?;
    let transform = args.label_transform.into();
    let mut split = if args.synth.synthetic {
        if args.data.is_some() {
            return Err(CliError::Usage(
                "--synthetic cannot be combined with --data".into(),
            ));
        }
        args.synth.validate()?;
        let side = synth_side_queries(args.synth.synth_queries);
        let [_, _, test] = synthesize_suite(&args.synth.spec(args.seed), side, side)?;
        apply_transform(test, transform)?
    } else {
        let path = args
            .data
            .as_deref()
            .ok_or_else(|| CliError::Usage("provide --data <path> or --synthetic".into()))?;
        load_split(path, transform)?
    };

    if split.feature_count() > scorer.feature_count() {
        return Err(CliError::Model(ModelError::FeatureMismatch {
            expected: scorer.feature_count(),
            got: split.feature_count(),
        }));
    }
    split.harmonize_feature_count(scorer.feature_count())?;

    let theta = dcg_weights(args.cutoff)?;
    let mut model = BTreeMap::new();
    let mut ideal = BTreeMap::new();
    for q in split.queries() {
        let scores = scorer.score_query(q)?;
        let ranking = top_k_by_score(&scores, args.cutoff)?;
        model.insert(
            q.query_id().to_string(),
            metric_value(&ranking, q.relevances(), &theta)?,
        );
        ideal.insert(
            q.query_id().to_string(),
            ideal_metric(q.relevances(), &theta)?,
        );
    }
    let report = dataset_ndcg(&model, &ideal, args.cutoff)?;
    let json = report.to_json_string();
    match &args.out {
        Some(path) => {
            fs::write(path, json).map_err(|source| CliError::Output {
                path: path.display().to_string(),
                source,
            })?;
            println!("wrote {}", path.display());
        }
        None => print!("{json}"),
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub algo: Algo,
    pub cutoff: usize,
    pub samples: usize,
    pub repeats: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub grad_mean_s: f64,
}

/// Times full training epochs and their gradient-only part (sampling plus
/// estimation, no model update) over the flag grid.
pub fn bench_run(args: &BenchArgs) -> Result<Vec<BenchRow>, CliError> {
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    if args.cutoffs.is_empty() || args.cutoffs.contains(&0) {
        return Err(CliError::Usage("--cutoffs needs positive entries".into()));
    }
    if args.samples.is_empty() || args.samples.contains(&0) {
        return Err(CliError::Usage("--samples needs positive entries".into()));
    }
    let mut split = if args.synth.synthetic {
        if args.data.is_some() {
            return Err(CliError::Usage(
                "--synthetic cannot be combined with --data".into(),
            ));
        }
        args.synth.validate()?;
        synthesize_dataset(&args.synth.spec(args.seed))?
    } else {
        let path = args
            .data
            .as_deref()
            .ok_or_else(|| CliError::Usage("provide --data <path> or --synthetic".into()))?;
        load_split(path, LabelTransform::Identity)?
    };

    let stream = RngStream::new(args.seed);
    let stats = split.compute_feature_stats().clone();
    let standardizer = Standardizer::new(stats.means, stats.stddevs)?;
    let config = ScorerConfig {
        architecture: args.arch.into(),
        hidden: vec![32, 32],
        init_seed: stream.derived_seed("model-init"),
    };

    let mut rows = Vec::new();
    for &algo in &args.algos {
        for &cutoff in &args.cutoffs {
            for &samples in &args.samples {
                let theta = dcg_weights(cutoff)?;
                let mut scorer: Scorer<Real> =
                    Scorer::initialize(&config, split.feature_count(), Some(standardizer.clone()))?;
                let mut walls = Vec::with_capacity(args.repeats);
                let mut grads = Vec::with_capacity(args.repeats);
                for epoch in 0..=args.repeats as u64 {
                    let (wall, grad) = bench_epoch(
                        &mut scorer,
                        &split,
                        algo,
                        cutoff,
                        samples,
                        epoch,
                        &stream,
                        &theta,
                    )?;
                    // Epoch 0 is warm-up.
                    if epoch > 0 {
                        walls.push(wall);
                        grads.push(grad);
                    }
                }
                let mean_s = mean(&walls);
                let row = BenchRow {
                    algo,
                    cutoff,
                    samples,
                    repeats: args.repeats,
                    mean_s,
                    std_s: population_std(&walls, mean_s),
                    grad_mean_s: mean(&grads),
                };
                println!(
                    "bench {} K={} N={}: {:.3}s/epoch ({:.3}s gradient-only)",
                    row.algo.name(),
                    row.cutoff,
                    row.samples,
                    row.mean_s,
                    row.grad_mean_s
                );
                rows.push(row);
            }
        }
    }

    let csv = bench_csv(&rows);
    match &args.out {
        Some(path) => {
            fs::write(path, csv).map_err(|source| CliError::Output {
                path: path.display().to_string(),
                source,
            })?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(rows)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_std(values: &[f64], mean: f64) -> f64 {
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn bench_epoch(
    scorer: &mut Scorer<Real>,
    split: &DatasetSplit<Real>,
    algo: Algo,
    cutoff: usize,
    samples: usize,
    epoch: u64,
    stream: &RngStream,
    theta: &MetricWeights<Real>,
) -> Result<(f64, f64), CliError> {
    let epoch_start = Instant::now();
    let mut grad_s = 0.0;
    for q in split.queries() {
        let scores = scorer.score_query(q)?;
        let grad_start = Instant::now();
        let mut rng = stream.sampler(q.query_id(), epoch, 0);
        let rankings = gumbel_sample_rankings(&scores, cutoff, samples, &mut rng)?;
        let grad = estimate(algo, &scores, q.relevances(), theta, &rankings)
            .map_err(|e| numerical(epoch, q.query_id(), e))?;
        grad_s += grad_start.elapsed().as_secs_f64();
        scorer.apply_gradient(q, &grad, 0.01).map_err(|e| match e {
            ModelError::NonFiniteUpdate { .. } => numerical(epoch, q.query_id(), e),
            other => CliError::Model(other),
        })?;
    }
    Ok((epoch_start.elapsed().as_secs_f64(), grad_s))
}

fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("# schema: plrank.bench.v1\nalgo,K,N,repeats,mean_s,std_s,grad_mean_s\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6}",
            row.algo.name(),
            row.cutoff,
            row.samples,
            row.repeats,
            row.mean_s,
            row.std_s,
            row.grad_mean_s
        );
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckSummary {
    pub cases_run: usize,
    pub failures: usize,
}

/// Randomized correctness suites: estimator equivalence, oracle
/// self-consistency, and estimator unbiasedness.
pub fn gradcheck_run(args: &GradcheckArgs) -> Result<GradcheckSummary, CliError> {
    if !(1..=8).contains(&args.max_items) {
        return Err(CliError::Usage(
            "--max-items must lie in 1..=8 (exhaustive-enumeration cap)".into(),
        ));
    }
    if args.samples_for_estimate == 0 {
        return Err(CliError::Usage(
            "--samples-for-estimate must be at least 1".into(),
        ));
    }
    if args.cases == 0 {
        println!("warning: --cases 0, every suite passes vacuously");
        return Ok(GradcheckSummary {
            cases_run: 0,
            failures: 0,
        });
    }

    let stream = RngStream::new(args.seed);
    let mut failures = 0;
    let mut cases_run = 0;

    // Suite 1: the two estimators are the same function of shared rankings.
    let mut rng = ChaCha8Rng::seed_from_u64(stream.derived_seed("gradcheck:equivalence"));
    for case in 0..args.cases {
        let d = rng.random_range(2..=50);
        let k = rng.random_range(1..=d);
        let (scores, rho) = random_instance(&mut rng, d, 3.0);
        let theta = if case % 2 == 0 {
            dcg_weights(k)?
        } else {
            precision_weights(k)?
        };
        let mut sampler = stream.sampler(&format!("gradcheck-eq-{case}"), 0, 0);
        let rankings = gumbel_sample_rankings(&scores, k, 20, &mut sampler)?;
        let fast = plrank3_estimate(&scores, &rho, &theta, &rankings)?;
        let reference = plrank2_estimate(&scores, &rho, &theta, &rankings)?;
        let mut max_dev = 0.0f64;
        let mut ok = true;
        for i in 0..d {
            let dev = (fast[i] - reference[i]).abs();
            max_dev = max_dev.max(dev);
            if dev > 1e-9 * fast[i].abs().max(reference[i].abs()) + 1e-12 {
                ok = false;
            }
        }
        report_case("equivalence", case, d, k, max_dev, ok, &mut failures);
        cases_run += 1;
    }

    // Suite 2: the enumeration oracle agrees with finite differences and
    // its gradient components sum to zero.
    let mut rng = ChaCha8Rng::seed_from_u64(stream.derived_seed("gradcheck:oracle"));
    for case in 0..args.cases {
        let d = rng.random_range(2..=args.max_items);
        let k = rng.random_range(1..=d);
        let (scores, rho) = random_instance(&mut rng, d, 2.0);
        let theta = dcg_weights(k)?;
        let exact = exact_gradient(&scores, &rho, &theta)?;
        let numeric = finite_difference_gradient(&scores, &rho, &theta, 1e-5)?;
        let mut max_dev = 0.0f64;
        for i in 0..d {
            max_dev = max_dev.max((exact[i] - numeric[i]).abs());
        }
        let total: f64 = exact.iter().sum();
        let ok = max_dev <= 1e-5 && total.abs() <= 1e-8;
        report_case("oracle-fd", case, d, k, max_dev.max(total.abs()), ok, &mut failures);
        cases_run += 1;
    }

    // Suite 3: the sampled estimate is centered on the exact gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(stream.derived_seed("gradcheck:unbiased"));
    for case in 0..args.cases {
        let d = rng.random_range(2..=args.max_items);
        let k = rng.random_range(1..=d);
        let (scores, rho) = random_instance(&mut rng, d, 2.0);
        let theta = dcg_weights(k)?;
        let exact = exact_gradient(&scores, &rho, &theta)?;
        let mut sampler = stream.sampler(&format!("gradcheck-ub-{case}"), 0, 0);
        let n = args.samples_for_estimate;
        let rankings = gumbel_sample_rankings(&scores, k, n, &mut sampler)?;
        let mut means = vec![0.0f64; d];
        let mut m2 = vec![0.0f64; d];
        for (i, ranking) in rankings.iter().enumerate() {
            let g = plrank3_estimate(&scores, &rho, &theta, std::slice::from_ref(ranking))?;
            for c in 0..d {
                let delta = g[c] - means[c];
                means[c] += delta / (i + 1) as f64;
                m2[c] += delta * (g[c] - means[c]);
            }
        }
        let mut max_z = 0.0f64;
        for c in 0..d {
            let se = (m2[c] / (n as f64 - 1.0) / n as f64).sqrt().max(1e-12);
            max_z = max_z.max((means[c] - exact[c]).abs() / se);
        }
        let ok = max_z <= 4.0;
        report_case("unbiasedness", case, d, k, max_z, ok, &mut failures);
        cases_run += 1;
    }

    println!("gradcheck: {cases_run} cases, {failures} failures");
    if failures > 0 {
        Err(CliError::Suite {
            failures,
            cases: cases_run,
        })
    } else {
        Ok(GradcheckSummary {
            cases_run,
            failures,
        })
    }
}

fn random_instance(rng: &mut ChaCha8Rng, d: usize, spread: f64) -> (ScoreVector<Real>, Vec<Real>) {
    let scores = ScoreVector::new((0..d).map(|_| rng.random_range(-spread..spread)).collect())
        .expect("finite scores");
    let rho: Vec<Real> = (0..d).map(|_| rng.random_range(0..5) as f64).collect();
    (scores, rho)
}

fn report_case(
    suite: &str,
    case: usize,
    d: usize,
    k: usize,
    deviation: f64,
    ok: bool,
    failures: &mut usize,
) {
    println!(
        "{suite} case {case}: D={d} K={k} max deviation {deviation:.3e} -> {}",
        if ok { "ok" } else { "FAIL" }
    );
    if !ok {
        *failures += 1;
    }
}
