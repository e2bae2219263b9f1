use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use labelmine::classifier::{threshold_scores, Classifier, OvrLogistic};
use labelmine::experiment::{grid_search, learning_curve, write_learning_curve};
use labelmine::oversample::read_history_csv;
use labelmine::{
    dataset_stats, gaussian_clusters, holdout_split, oversample, split_labeled_unlabeled,
    EvalPolicy, EvaluationReport, ExperimentPlan, LabelMatrix, LabeledSet, MeasureSpec,
    OversampleConfig, ScoreMatrix, SimilarityCalcType, SimilarityKind, SyntheticSpec,
    TrainingParams, UnlabeledPool,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUN: u8 = 3;

#[derive(Parser)]
#[command(
    name = "labelmine",
    version,
    about = "Similarity-guided oversampling for imbalanced multi-label data"
)]
struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a labeled file into labeled, unlabeled-pool and optional test files.
    Split(SplitArgs),
    /// Run one oversampling pass.
    Oversample(OversampleArgs),
    /// Cross-validated grid search over oversampling parameters.
    Gridsearch(GridArgs),
    /// Compute every measure on a prediction file or a freshly trained model.
    Evaluate(EvaluateArgs),
    /// Summary statistics of a labeled file.
    Stats(StatsArgs),
    /// Learning curve CSV from a history file.
    Curve(CurveArgs),
    /// Generate a synthetic Gaussian-cluster dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    labeled_fraction: f64,
    /// Fraction held out as a test file before the labeled/pool split.
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Flags shared by commands that configure the oversampler.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    measure: Option<MeasureSpec>,
    #[arg(long)]
    eval_policy: Option<EvalPolicy>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    decision_threshold: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl Overrides {
    fn apply_training(&self, t: &mut TrainingParams) {
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.l2 {
            t.l2 = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
    }
}

#[derive(Args)]
struct OversampleArgs {
    #[arg(long)]
    labeled: PathBuf,
    /// Unlabeled pool; omitted means an empty pool.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Labeled evaluation set for the external-test policy.
    #[arg(long)]
    eval_set: Option<PathBuf>,
    /// JSON object with oversampling settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    balance_ratio: Option<f64>,
    #[arg(long)]
    calc_type: Option<SimilarityCalcType>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    kind: Option<SimilarityKind>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct GridArgs {
    /// Labeled dataset; may also come from the config file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON object with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    labeled_fraction: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    balance_ratios: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    calc_types: Option<Vec<SimilarityCalcType>>,
    #[arg(long, value_delimiter = ',')]
    batch_sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    iterations: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<SimilarityKind>>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Labeled file with the true labels.
    #[arg(long)]
    truth: PathBuf,
    /// JSONL predictions: {"id", "scores", optional "labels"} per line.
    #[arg(long, conflicts_with_all = ["train", "model"])]
    predictions: Option<PathBuf>,
    /// Train a classifier on this labeled file and evaluate it.
    #[arg(long, conflicts_with = "model")]
    train: Option<PathBuf>,
    /// Evaluate a saved classifier.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Save the trained classifier.
    #[arg(long, requires = "train")]
    model_out: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    history: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    max_imbalance: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(labelmine::Error),
}

impl From<labelmine::Error> for Failure {
    fn from(e: labelmine::Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

fn read_config<T: DeserializeOwned + Default>(
    path: Option<&Path>,
) -> std::result::Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let file = File::open(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(labelmine::Error::from)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")
            .map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))),
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                Err(Failure::Lib(labelmine::Error::Io {
                    path: "<stdout>".into(),
                    source: e,
                }))
            }
            _ => Ok(()),
        },
    }
}

fn cmd_split(a: SplitArgs) -> CliResult {
    let data = LabeledSet::read(&a.input)?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| Failure::Usage(format!("{}: {e}", a.out_dir.display())))?;
    let rest = match a.test_fraction {
        Some(f) => {
            let (test, rest) = holdout_split(&data, f, a.seed)?;
            test.write(a.out_dir.join("test.jsonl"))?;
            rest
        }
        None => data,
    };
    let split = split_labeled_unlabeled(&rest, a.labeled_fraction, a.seed)?;
    split.labeled.write(a.out_dir.join("labeled.jsonl"))?;
    split.pool.write(a.out_dir.join("pool.jsonl"))?;
    let truth_ids: Vec<usize> = (0..rest.len())
        .filter(|&i| split.hidden_labels.contains_key(&rest.instances()[i].id))
        .collect();
    rest.select(&truth_ids)
        .write(a.out_dir.join("pool_truth.jsonl"))?;
    eprintln!(
        "labeled {} / pool {}",
        split.labeled.len(),
        split.pool.len()
    );
    Ok(())
}

fn cmd_oversample(a: OversampleArgs) -> CliResult {
    let mut cfg: OversampleConfig = read_config(a.config.as_deref())?;
    cfg.seed = a.seed;
    if let Some(v) = a.balance_ratio {
        cfg.balance_ratio = v;
    }
    if let Some(v) = a.calc_type {
        cfg.similarity_calc_type = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.iterations {
        cfg.num_iterations = v;
    }
    if let Some(v) = a.kind {
        cfg.similarity_kind = v;
    }
    let o = &a.overrides;
    if let Some(v) = o.measure {
        cfg.measure = v;
    }
    if let Some(v) = o.eval_policy {
        cfg.eval_policy = v;
    }
    if let Some(v) = o.validation_fraction {
        cfg.validation_fraction = v;
    }
    if let Some(v) = o.decision_threshold {
        cfg.decision_threshold = v;
    }
    o.apply_training(&mut cfg.training);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if cfg.eval_policy == EvalPolicy::ExternalTest && a.eval_set.is_none() {
        return Err(Failure::Usage(
            "the external_test policy needs --eval-set".into(),
        ));
    }

    let labeled = LabeledSet::read(&a.labeled)?;
    let pool = match &a.pool {
        Some(p) => UnlabeledPool::read(p)?,
        None => UnlabeledPool::empty(labeled.header().clone()),
    };
    let eval = a.eval_set.as_ref().map(LabeledSet::read).transpose()?;
    let outcome = oversample(&labeled, &pool, &cfg, eval.as_ref())?;
    outcome.write_outputs(&a.out_dir)?;
    write_json(None, &outcome.summary())
}

fn cmd_gridsearch(a: GridArgs) -> CliResult {
    let mut plan: ExperimentPlan = read_config(a.config.as_deref())?;
    plan.seed = a.seed;
    if let Some(v) = a.data {
        plan.dataset = Some(v);
    }
    if let Some(v) = a.out_dir {
        plan.output_dir = Some(v);
    }
    if let Some(v) = a.labeled_fraction {
        plan.labeled_fraction = v;
    }
    if let Some(v) = a.folds {
        plan.folds = v;
    }
    if let Some(v) = a.workers {
        plan.workers = v;
    }
    if let Some(v) = a.balance_ratios {
        plan.grid.balance_ratios = v;
    }
    if let Some(v) = a.calc_types {
        plan.grid.calc_types = v;
    }
    if let Some(v) = a.batch_sizes {
        plan.grid.batch_sizes = v;
    }
    if let Some(v) = a.iterations {
        plan.grid.iterations = v;
    }
    if let Some(v) = a.kinds {
        plan.grid.kinds = v;
    }
    let o = &a.overrides;
    if let Some(v) = o.measure {
        plan.measure = v;
    }
    if let Some(v) = o.eval_policy {
        plan.eval_policy = v;
    }
    if let Some(v) = o.validation_fraction {
        plan.validation_fraction = v;
    }
    if let Some(v) = o.decision_threshold {
        plan.decision_threshold = v;
    }
    o.apply_training(&mut plan.training);
    plan.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let data_path = plan
        .dataset
        .clone()
        .ok_or_else(|| Failure::Usage("no dataset given (--data or config `dataset`)".into()))?;

    let data = LabeledSet::read(&data_path)?;
    let result = grid_search(&data, &plan)?;
    if let Some(dir) = &plan.output_dir {
        result.write_outputs(dir)?;
    }
    let failed = result.runs.iter().filter(|r| r.error.is_some()).count();
    match result.best {
        Some(i) => write_json(None, &result.configs[i])?,
        None => eprintln!("no configuration completed every fold"),
    }
    if failed > 0 {
        eprintln!("{failed} of {} runs failed", result.runs.len());
    }
    if result.best.is_none() {
        return Err(Failure::Lib(labelmine::Error::InvalidArgument(
            "grid search produced no complete configuration".into(),
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
struct PredictionRecord {
    id: String,
    scores: Vec<f64>,
    #[serde(default)]
    labels: Option<Vec<u8>>,
}

fn read_predictions(path: &Path) -> labelmine::Result<HashMap<String, PredictionRecord>> {
    let file = File::open(path).map_err(|e| labelmine::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| labelmine::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| labelmine::Error::MalformedRecord {
                line: n + 1,
                message: e.to_string(),
            })?;
        if out.contains_key(&rec.id) {
            return Err(labelmine::Error::DuplicateId(rec.id));
        }
        out.insert(rec.id.clone(), rec);
    }
    Ok(out)
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(Failure::Usage(format!(
            "threshold {} outside (0, 1)",
            a.threshold
        )));
    }
    let truth = LabeledSet::read(&a.truth)?;
    let l = truth.num_classes();
    let truth_m = truth.label_matrix();
    let report = if let Some(p) = &a.predictions {
        let preds = read_predictions(p)?;
        let mut scores = Vec::with_capacity(truth.len() * l);
        let mut labels = Vec::with_capacity(truth.len() * l);
        for inst in truth.instances() {
            let rec = preds.get(&inst.id).ok_or_else(|| {
                labelmine::Error::Incompatible(format!("no prediction for `{}`", inst.id))
            })?;
            if rec.scores.len() != l || rec.labels.as_ref().is_some_and(|v| v.len() != l) {
                return Err(labelmine::Error::Incompatible(format!(
                    "prediction `{}` does not have {l} entries",
                    inst.id
                ))
                .into());
            }
            scores.extend_from_slice(&rec.scores);
            match &rec.labels {
                Some(v) => labels.extend_from_slice(v),
                None => labels.extend(rec.scores.iter().map(|&s| u8::from(s >= a.threshold))),
            }
        }
        let scores = ScoreMatrix::from_vec(truth.len(), l, scores)?;
        let labels = LabelMatrix::from_vec(truth.len(), l, labels)?;
        EvaluationReport::compute(&truth_m, &labels, &scores)?
    } else {
        let model = if let Some(train) = &a.train {
            let mut params = TrainingParams::default();
            if let Some(v) = a.learning_rate {
                params.learning_rate = v;
            }
            if let Some(v) = a.l2 {
                params.l2 = v;
            }
            if let Some(v) = a.epochs {
                params.epochs = v;
            }
            let train = LabeledSet::read(train)?;
            if !train.is_compatible(&truth) {
                return Err(labelmine::Error::Incompatible(
                    "training and truth files differ in dimension or classes".into(),
                )
                .into());
            }
            let model = OvrLogistic::train(&train, &params)?;
            if let Some(out) = &a.model_out {
                model.write(out)?;
            }
            model
        } else if let Some(m) = &a.model {
            OvrLogistic::read(m)?
        } else {
            return Err(Failure::Usage(
                "one of --predictions, --train or --model is required".into(),
            ));
        };
        let scores = model.score_matrix(&truth)?;
        let labels = threshold_scores(&scores, a.threshold);
        EvaluationReport::compute(&truth_m, &labels, &scores)?
    };
    write_json(a.out.as_deref(), &report)
}

fn cmd_stats(a: StatsArgs) -> CliResult {
    let data = LabeledSet::read(&a.input)?;
    write_json(None, &dataset_stats(&data)?)
}

fn cmd_curve(a: CurveArgs) -> CliResult {
    let history = read_history_csv(&a.history)?;
    let points = learning_curve(&history)?;
    write_learning_curve(&a.out, &points)?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let mut spec = SyntheticSpec {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(v) = a.instances {
        spec.num_instances = v;
    }
    if let Some(v) = a.dimension {
        spec.dimension = v;
    }
    if let Some(v) = a.classes {
        spec.num_classes = v;
    }
    if let Some(v) = a.max_imbalance {
        spec.max_imbalance = v;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    let data = gaussian_clusters(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
    data.write(&a.out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Split(a) => cmd_split(a),
        Command::Oversample(a) => cmd_oversample(a),
        Command::Gridsearch(a) => cmd_gridsearch(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Synth(a) => cmd_synth(a),
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                ExitCode::from(EXIT_DATA)
            } else {
                ExitCode::from(EXIT_RUN)
            }
        }
    }
}
