//! Cross-validated experiments: per-fold baseline/oversample/final runs,
//! the parameter grid, aggregation, and learning curves.
//!
//! Folds define the test set. Inside each fold's training partition the
//! data is split again into a labeled part and an unlabeled pool, so the
//! test partition never reaches the oversampler except as the gate's
//! evaluation set under the external-test policy.

use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{Trainer, TrainingParams};
use crate::data::{kfold_split, split_labeled_unlabeled, Fold, LabeledSet};
use crate::error::{Error, Result};
use crate::metrics::{percent_improvement, MeasureSpec, Orientation};
use crate::oversample::{
    oversample, EvalPolicy, Evaluator, MetricHistoryRecord, OversampleConfig, OversampleOutcome,
};
use crate::similarity::{SimilarityCalcType, SimilarityKind};

/// Value lists for the five tunable parameters. Configurations are the
/// Cartesian product, enumerated with the balance ratio varying slowest and
/// the similarity kind fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParameterGrid {
    pub balance_ratios: Vec<f64>,
    pub calc_types: Vec<SimilarityCalcType>,
    pub batch_sizes: Vec<usize>,
    pub iterations: Vec<usize>,
    pub kinds: Vec<SimilarityKind>,
}

impl ParameterGrid {
    /// The published optimization grid (480 configurations).
    pub fn published() -> Self {
        Self {
            balance_ratios: vec![0.2, 0.3, 0.4, 0.5],
            calc_types: SimilarityCalcType::ALL.to_vec(),
            batch_sizes: vec![1, 2, 3, 5, 7],
            iterations: vec![50, 100, 200, 500],
            kinds: SimilarityKind::ALL.to_vec(),
        }
    }

    /// One-point grid holding the given configuration's parameters.
    pub fn single(config: &OversampleConfig) -> Self {
        Self {
            balance_ratios: vec![config.balance_ratio],
            calc_types: vec![config.similarity_calc_type],
            batch_sizes: vec![config.batch_size],
            iterations: vec![config.num_iterations],
            kinds: vec![config.similarity_kind],
        }
    }

    pub fn len(&self) -> usize {
        self.balance_ratios.len()
            * self.calc_types.len()
            * self.batch_sizes.len()
            * self.iterations.len()
            * self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Expands the grid on top of `base`, which supplies every
    /// non-grid field.
    pub fn configs(&self, base: &OversampleConfig) -> Vec<OversampleConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &balance_ratio in &self.balance_ratios {
            for &similarity_calc_type in &self.calc_types {
                for &batch_size in &self.batch_sizes {
                    for &num_iterations in &self.iterations {
                        for &similarity_kind in &self.kinds {
                            out.push(OversampleConfig {
                                balance_ratio,
                                similarity_calc_type,
                                batch_size,
                                num_iterations,
                                similarity_kind,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

impl Default for ParameterGrid {
    fn default() -> Self {
        Self::published()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    /// Labeled dataset file; unused when data is passed in directly.
    pub dataset: Option<PathBuf>,
    pub labeled_fraction: f64,
    pub folds: usize,
    pub grid: ParameterGrid,
    pub measure: MeasureSpec,
    pub seed: u64,
    pub eval_policy: EvalPolicy,
    pub validation_fraction: f64,
    pub decision_threshold: f64,
    pub training: TrainingParams,
    pub output_dir: Option<PathBuf>,
    /// Number of concurrent (fold, config) runs.
    pub workers: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        let base = OversampleConfig::default();
        Self {
            dataset: None,
            labeled_fraction: 0.05,
            folds: 5,
            grid: ParameterGrid::published(),
            measure: base.measure,
            seed: 0,
            eval_policy: base.eval_policy,
            validation_fraction: base.validation_fraction,
            decision_threshold: base.decision_threshold,
            training: base.training,
            output_dir: None,
            workers: 1,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("parameter grid is empty".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidArgument(format!(
                "{} folds, need at least 2",
                self.folds
            )));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "labeled fraction {} outside (0, 1)",
                self.labeled_fraction
            )));
        }
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// Configuration template carrying the plan-wide settings.
    pub fn base_config(&self) -> OversampleConfig {
        OversampleConfig {
            measure: self.measure,
            seed: self.seed,
            eval_policy: self.eval_policy,
            validation_fraction: self.validation_fraction,
            decision_threshold: self.decision_threshold,
            training: self.training,
            ..OversampleConfig::default()
        }
    }

    pub fn configs(&self) -> Vec<OversampleConfig> {
        self.grid.configs(&self.base_config())
    }

    pub fn fold_partitions(&self, n: usize) -> Result<Vec<Fold>> {
        kfold_split(n, self.folds, self.seed)
    }
}

/// Outcome of one (fold, configuration) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub initial_measure: f64,
    pub final_measure: f64,
    pub improvement: f64,
    pub instances_added: usize,
    pub initial_labeled_size: usize,
    pub pool_size: usize,
    pub oversample_seconds: f64,
    /// Fraction of added instances whose pseudo-label vector equals the
    /// held-back true labels.
    pub pseudo_label_exact_match: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FoldRun {
    pub result: FoldResult,
    pub outcome: OversampleOutcome,
}

/// Seed used for the labeled/unlabeled split and the oversampler in a fold.
fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1))
}

/// Baseline, oversampling and final classifier for one fold.
pub fn run_fold(
    data: &LabeledSet,
    plan: &ExperimentPlan,
    folds: &[Fold],
    fold: usize,
    config: &OversampleConfig,
) -> Result<FoldRun> {
    let part = folds
        .get(fold)
        .ok_or_else(|| Error::InvalidArgument(format!("no fold {fold}")))?;
    let train_part = data.select(&part.train);
    let test = data.select(&part.test);
    let seed = fold_seed(plan.seed, fold);
    let split = split_labeled_unlabeled(&train_part, plan.labeled_fraction, seed)?;

    let evaluator = Evaluator::new(test.clone(), config.measure, config.decision_threshold)?;
    let baseline = config.training.train(&split.labeled)?;
    let p0 = evaluator.measure(&baseline)?.value;

    let run_config = OversampleConfig {
        seed,
        ..config.clone()
    };
    let started = Instant::now();
    let outcome = oversample(&split.labeled, &split.pool, &run_config, Some(&test))?;
    let oversample_seconds = started.elapsed().as_secs_f64();

    let test_ids: HashSet<&str> = test.ids().collect();
    if let Some(id) = outcome
        .labeled
        .ids()
        .chain(outcome.pool.ids())
        .find(|id| test_ids.contains(id))
    {
        return Err(Error::Incompatible(format!(
            "test instance `{id}` leaked into the oversampler's data"
        )));
    }

    let final_model = config.training.train(&outcome.labeled)?;
    let p1 = evaluator.measure(&final_model)?.value;
    let improvement = percent_improvement(p0, p1)?;

    let pseudo_label_exact_match = (!outcome.added.is_empty()).then(|| {
        let hits = outcome
            .added
            .iter()
            .filter(|a| split.hidden_labels.get(&a.id) == Some(&a.proposal.labels))
            .count();
        hits as f64 / outcome.added.len() as f64
    });

    Ok(FoldRun {
        result: FoldResult {
            fold,
            initial_measure: p0,
            final_measure: p1,
            improvement,
            instances_added: outcome.added.len(),
            initial_labeled_size: split.labeled.len(),
            pool_size: split.pool.len(),
            oversample_seconds,
            pseudo_label_exact_match,
        },
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_index: usize,
    pub fold: usize,
    pub result: Option<FoldResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub index: usize,
    pub balance_ratio: f64,
    pub similarity_calc_type: SimilarityCalcType,
    pub batch_size: usize,
    pub num_iterations: usize,
    pub similarity_kind: SimilarityKind,
    pub completed_folds: usize,
    pub complete: bool,
    pub mean_initial_measure: f64,
    pub mean_final_measure: f64,
    pub mean_improvement: f64,
    pub std_improvement: f64,
    pub mean_instances_added: f64,
    pub mean_oversample_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub measure: MeasureSpec,
    pub folds: usize,
    pub runs: Vec<RunRecord>,
    pub configs: Vec<ConfigSummary>,
    /// Index of the complete configuration with the highest mean
    /// improvement (lowest index on ties).
    pub best: Option<usize>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation; 0 for fewer than two values.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Per-configuration means and spreads over completed folds.
pub fn aggregate(
    configs: &[OversampleConfig],
    runs: &[RunRecord],
    folds: usize,
) -> Vec<ConfigSummary> {
    configs
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let done: Vec<&FoldResult> = runs
                .iter()
                .filter(|r| r.config_index == index)
                .filter_map(|r| r.result.as_ref())
                .collect();
            let pick = |f: fn(&FoldResult) -> f64| done.iter().map(|r| f(r)).collect::<Vec<_>>();
            let improvements = pick(|r| r.improvement);
            ConfigSummary {
                index,
                balance_ratio: c.balance_ratio,
                similarity_calc_type: c.similarity_calc_type,
                batch_size: c.batch_size,
                num_iterations: c.num_iterations,
                similarity_kind: c.similarity_kind,
                completed_folds: done.len(),
                complete: done.len() == folds,
                mean_initial_measure: mean(&pick(|r| r.initial_measure)),
                mean_final_measure: mean(&pick(|r| r.final_measure)),
                mean_improvement: mean(&improvements),
                std_improvement: std_dev(&improvements),
                mean_instances_added: mean(&pick(|r| r.instances_added as f64)),
                mean_oversample_seconds: mean(&pick(|r| r.oversample_seconds)),
            }
        })
        .collect()
}

/// Argmax of mean improvement over complete configurations; the first
/// index wins ties.
pub fn best_config(summaries: &[ConfigSummary]) -> Option<usize> {
    let mut best: Option<&ConfigSummary> = None;
    for s in summaries.iter().filter(|s| s.complete) {
        if best.is_none_or(|b| s.mean_improvement > b.mean_improvement) {
            best = Some(s);
        }
    }
    best.map(|s| s.index)
}

/// Every configuration of the plan's grid on every fold. A failing run is
/// recorded with its error and marks its configuration incomplete.
pub fn grid_search(data: &LabeledSet, plan: &ExperimentPlan) -> Result<ExperimentResult> {
    plan.validate()?;
    let folds = plan.fold_partitions(data.len())?;
    let configs = plan.configs();
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..plan.folds).map(move |f| (c, f)))
        .collect();
    let run = |&(config_index, fold): &(usize, usize)| match run_fold(
        data,
        plan,
        &folds,
        fold,
        &configs[config_index],
    ) {
        Ok(r) => RunRecord {
            config_index,
            fold,
            result: Some(r.result),
            error: None,
        },
        Err(e) => {
            log::warn!("config {config_index} fold {fold} failed: {e}");
            RunRecord {
                config_index,
                fold,
                result: None,
                error: Some(e.to_string()),
            }
        }
    };
    let runs: Vec<RunRecord> = if plan.workers > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(plan.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.iter().map(run).collect()
    };
    let summaries = aggregate(&configs, &runs, plan.folds);
    Ok(ExperimentResult {
        measure: plan.measure,
        folds: plan.folds,
        best: best_config(&summaries),
        configs: summaries,
        runs,
    })
}

impl ExperimentResult {
    /// Writes `runs.csv`, `configs.csv` and `result.json` into `dir`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let path = dir.join("runs.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "config",
            "fold",
            "initial_measure",
            "final_measure",
            "improvement",
            "instances_added",
            "oversample_seconds",
            "error",
        ])?;
        for r in &self.runs {
            let f = |v: Option<String>| v.unwrap_or_default();
            let res = r.result.as_ref();
            w.write_record([
                r.config_index.to_string(),
                r.fold.to_string(),
                f(res.map(|x| x.initial_measure.to_string())),
                f(res.map(|x| x.final_measure.to_string())),
                f(res.map(|x| x.improvement.to_string())),
                f(res.map(|x| x.instances_added.to_string())),
                f(res.map(|x| x.oversample_seconds.to_string())),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("configs.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for s in &self.configs {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("result.json");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

/// One point of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub instances_added: usize,
    pub measure: f64,
}

/// Baseline point followed by one point per accepted iteration, with the
/// cumulative number of instances added.
pub fn learning_curve(history: &[MetricHistoryRecord]) -> Result<Vec<CurvePoint>> {
    let (first, rest) = history
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty history".into()))?;
    let mut points = vec![CurvePoint {
        instances_added: 0,
        measure: first.measure_value,
    }];
    let mut added = 0;
    for r in rest.iter().filter(|r| r.accepted) {
        added += r.candidate_count;
        points.push(CurvePoint {
            instances_added: added,
            measure: r.measure_value,
        });
    }
    Ok(points)
}

pub fn write_learning_curve(path: impl AsRef<Path>, points: &[CurvePoint]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// True when accepted measure values never move against the orientation.
pub fn is_monotone(points: &[CurvePoint], orientation: Orientation) -> bool {
    points.windows(2).all(|w| match orientation {
        Orientation::Maximize => w[1].measure >= w[0].measure,
        Orientation::Minimize => w[1].measure <= w[0].measure,
    })
}
