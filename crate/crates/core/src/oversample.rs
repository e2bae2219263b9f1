//! The improvement-gated oversampling loop.
//!
//! Each iteration weighs classes by how far they are from the target
//! balance and how poorly the current model does on them, draws one class,
//! pulls a batch of pool instances whose similarity to that class clears
//! its threshold, pseudo-labels them against every class threshold, and
//! keeps them only if a retrained classifier strictly improves the chosen
//! measure. Examined candidates leave the pool either way.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{threshold_scores, Classifier, Trainer, TrainingParams};
use crate::data::{rng_for, stratified_selection, Instance, LabeledSet, UnlabeledPool};
use crate::error::{Error, Result};
use crate::matrix::LabelMatrix;
use crate::metrics::{self, percent_improvement, MeasureSpec, Orientation};
use crate::similarity::{
    build_profiles, similarity_to_members, ClassSimilarityProfile, SimilarityCalcType,
    SimilarityKind,
};

/// Which data the improvement gate measures on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPolicy {
    /// A seeded stratified slice of the labeled set is held out for the gate.
    InternalValidation,
    /// The gate measures on a caller-supplied set (the test partition when
    /// reproducing the published protocol).
    ExternalTest,
}

impl FromStr for EvalPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "internal_validation" | "internal" => Ok(EvalPolicy::InternalValidation),
            "external_test" | "external" => Ok(EvalPolicy::ExternalTest),
            other => Err(Error::InvalidArgument(format!(
                "unknown evaluation policy `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OversampleConfig {
    pub balance_ratio: f64,
    pub similarity_calc_type: SimilarityCalcType,
    pub batch_size: usize,
    pub num_iterations: usize,
    pub similarity_kind: SimilarityKind,
    pub measure: MeasureSpec,
    pub seed: u64,
    pub eval_policy: EvalPolicy,
    pub validation_fraction: f64,
    pub decision_threshold: f64,
    pub training: TrainingParams,
}

impl Default for OversampleConfig {
    /// The best-performing published setting: batch 5, euclidean,
    /// safe interval, balance ratio 0.2, 100 iterations.
    fn default() -> Self {
        Self {
            balance_ratio: 0.2,
            similarity_calc_type: SimilarityCalcType::SafeInterval,
            batch_size: 5,
            num_iterations: 100,
            similarity_kind: SimilarityKind::Euclidean,
            measure: MeasureSpec::default(),
            seed: 0,
            eval_policy: EvalPolicy::InternalValidation,
            validation_fraction: 0.2,
            decision_threshold: 0.5,
            training: TrainingParams::default(),
        }
    }
}

impl OversampleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.balance_ratio > 0.0 && self.balance_ratio <= 1.0) {
            return bad(format!(
                "balance ratio {} outside (0, 1]",
                self.balance_ratio
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation fraction {} outside (0, 1)",
                self.validation_fraction
            ));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad(format!(
                "decision threshold {} outside (0, 1)",
                self.decision_threshold
            ));
        }
        if !(self.training.learning_rate > 0.0) || self.training.l2 < 0.0 {
            return bad(format!("bad training parameters {:?}", self.training));
        }
        Ok(())
    }
}

/// `1 - value` for maximized measures, `value` for minimized ones. The
/// value must already lie in [0, 1].
pub fn performance_factor(value: f64, orientation: Orientation) -> Result<f64> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidArgument(format!(
            "measure value {value} outside [0, 1]"
        )));
    }
    Ok(match orientation {
        Orientation::Maximize => 1.0 - value,
        Orientation::Minimize => value,
    })
}

/// Priority weight for a class: `max(0, (n r - n_i) * 2 * rho)`.
pub fn required_instances(n: usize, balance_ratio: f64, class_count: usize, rho: f64) -> f64 {
    ((n as f64 * balance_ratio - class_count as f64) * 2.0 * rho).max(0.0)
}

/// Per-class required counts and the selection distribution derived from
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassNeed {
    pub required: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Normalizes needs to a distribution; `None` when every need is zero.
pub fn selection_probabilities(needs: &[f64]) -> Option<ClassNeed> {
    let total: f64 = needs.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    Some(ClassNeed {
        required: needs.to_vec(),
        probabilities: needs.iter().map(|n| n / total).collect(),
    })
}

/// Draws a class index according to the selection probabilities.
pub fn draw_class(need: &ClassNeed, rng: &mut impl Rng) -> usize {
    WeightedIndex::new(&need.probabilities)
        .expect("probabilities with positive mass")
        .sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Index into the pool at the time of the search.
    pub pool_index: usize,
    pub similarity: f64,
}

/// Scans the pool in a freshly shuffled order and collects up to
/// `batch_size` instances whose mean similarity to the labeled members of
/// `class` reaches the class threshold. Returns nothing when the class has
/// no labeled members.
pub fn find_candidates(
    pool: &UnlabeledPool,
    reference: &LabeledSet,
    class: usize,
    profiles: &[ClassSimilarityProfile],
    batch_size: usize,
    kind: SimilarityKind,
    rng: &mut impl Rng,
) -> Result<Vec<Candidate>> {
    let members = reference.members(class);
    if members.is_empty() || pool.is_empty() {
        return Ok(Vec::new());
    }
    let threshold = profiles[class].threshold();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(rng);
    let mut found = Vec::with_capacity(batch_size);
    for idx in order {
        let sim = similarity_to_members(&pool.instances()[idx].vector, reference, &members, kind)?;
        if sim >= threshold {
            found.push(Candidate {
                pool_index: idx,
                similarity: sim,
            });
            if found.len() == batch_size {
                break;
            }
        }
    }
    Ok(found)
}

/// Pseudo-label of one candidate together with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub labels: Vec<u8>,
    /// Similarity to each class; `None` for classes with no labeled member.
    pub similarities: Vec<Option<f64>>,
    pub thresholds: Vec<f64>,
}

/// Label `j` is set when the candidate's similarity to class `j` reaches
/// that class's threshold; the selected class is always set.
pub fn propose_labels(
    candidates: &[&[f64]],
    reference: &LabeledSet,
    profiles: &[ClassSimilarityProfile],
    kind: SimilarityKind,
    selected_class: usize,
) -> Result<Vec<Proposal>> {
    let members: Vec<Vec<usize>> = (0..reference.num_classes())
        .map(|c| reference.members(c))
        .collect();
    let thresholds: Vec<f64> = profiles.iter().map(|p| p.threshold()).collect();
    candidates
        .iter()
        .map(|x| {
            let similarities = members
                .iter()
                .map(|m| {
                    if m.is_empty() {
                        Ok(None)
                    } else {
                        similarity_to_members(x, reference, m, kind).map(Some)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let mut labels: Vec<u8> = similarities
                .iter()
                .zip(&thresholds)
                .map(|(s, &t)| u8::from(s.is_some_and(|s| s >= t)))
                .collect();
            labels[selected_class] = 1;
            Ok(Proposal {
                labels,
                similarities,
                thresholds: thresholds.clone(),
            })
        })
        .collect()
}

/// A measured value and, for per-class decomposable measures, the
/// per-class values.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub value: f64,
    pub per_class: Option<Vec<f64>>,
}

/// Scores classifiers on a fixed labeled evaluation set.
#[derive(Debug, Clone)]
pub struct Evaluator {
    set: LabeledSet,
    truth: LabelMatrix,
    spec: MeasureSpec,
    decision_threshold: f64,
    ids: HashSet<String>,
}

impl Evaluator {
    pub fn new(set: LabeledSet, spec: MeasureSpec, decision_threshold: f64) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::InvalidArgument("empty evaluation set".into()));
        }
        Ok(Self {
            truth: set.label_matrix(),
            ids: set.ids().map(str::to_owned).collect(),
            set,
            spec,
            decision_threshold,
        })
    }

    pub fn spec(&self) -> MeasureSpec {
        self.spec
    }

    pub fn set(&self) -> &LabeledSet {
        &self.set
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn measure<C: Classifier + ?Sized>(&self, model: &C) -> Result<Measurement> {
        let scores = model.score_matrix(&self.set)?;
        let pred = threshold_scores(&scores, self.decision_threshold);
        Ok(Measurement {
            value: metrics::evaluate(self.spec, &self.truth, &pred, &scores)?,
            per_class: metrics::per_class_values(self.spec, &self.truth, &pred)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome<M> {
    pub accepted: bool,
    pub measurement: Measurement,
    pub model: M,
}

/// Retrains on `labeled` plus the pseudo-labeled candidates and accepts
/// them iff the measure strictly beats `best_so_far`.
pub fn improvement_step<T: Trainer>(
    trainer: &T,
    labeled: &LabeledSet,
    candidates: &[Instance],
    evaluator: &Evaluator,
    best_so_far: f64,
) -> Result<StepOutcome<T::Model>> {
    let mut trial = labeled.clone();
    for c in candidates {
        trial.push(c.clone())?;
    }
    if let Some(id) = trial.ids().find(|id| evaluator.contains_id(id)) {
        return Err(Error::Incompatible(format!(
            "instance `{id}` is in both the training data and the evaluation set"
        )));
    }
    let model = trainer.train(&trial)?;
    let measurement = evaluator.measure(&model)?;
    Ok(StepOutcome {
        accepted: evaluator.spec().improves(measurement.value, best_so_far),
        measurement,
        model,
    })
}

/// One row of the loop trace. Iteration 0 is the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricHistoryRecord {
    pub iteration: usize,
    pub selected_class: Option<usize>,
    pub candidate_count: usize,
    pub accepted: bool,
    /// The trial measure when candidates were evaluated, otherwise the
    /// incumbent value.
    pub measure_value: f64,
    pub factors: Vec<f64>,
    pub labeled_size: usize,
    pub unlabeled_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddedInstance {
    pub id: String,
    pub iteration: usize,
    pub selected_class: usize,
    #[serde(flatten)]
    pub proposal: Proposal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    PoolExhausted,
    Balanced,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Completed => "completed",
            StopReason::PoolExhausted => "pool_exhausted",
            StopReason::Balanced => "balanced",
        })
    }
}

#[derive(Debug, Clone)]
pub struct OversampleOutcome {
    /// The input labeled set followed by every accepted instance.
    pub labeled: LabeledSet,
    pub pool: UnlabeledPool,
    pub history: Vec<MetricHistoryRecord>,
    pub added: Vec<AddedInstance>,
    pub measure: MeasureSpec,
    pub initial_measure: f64,
    pub final_measure: f64,
    /// Candidates that were evaluated, rejected, and dropped from the pool.
    pub rejected_count: usize,
    pub stop_reason: StopReason,
    pub warnings: Vec<String>,
    pub class_names: Vec<String>,
    pub elapsed_seconds: f64,
}

/// Run with the default logistic classifier configured in `config.training`.
pub fn oversample(
    labeled: &LabeledSet,
    pool: &UnlabeledPool,
    config: &OversampleConfig,
    external_eval: Option<&LabeledSet>,
) -> Result<OversampleOutcome> {
    oversample_with(&config.training, labeled, pool, config, external_eval)
}

pub fn oversample_with<T: Trainer>(
    trainer: &T,
    labeled: &LabeledSet,
    pool: &UnlabeledPool,
    config: &OversampleConfig,
    external_eval: Option<&LabeledSet>,
) -> Result<OversampleOutcome> {
    let started = Instant::now();
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !labeled.is_compatible(pool) {
        return Err(Error::Incompatible(
            "labeled set and pool differ in dimension or class count".into(),
        ));
    }
    let labeled_ids: HashSet<&str> = labeled.ids().collect();
    if let Some(id) = pool.ids().find(|id| labeled_ids.contains(id)) {
        return Err(Error::Incompatible(format!(
            "instance `{id}` is in both the labeled set and the pool"
        )));
    }

    let (mut train, evaluator) = match config.eval_policy {
        EvalPolicy::ExternalTest => {
            let eval = external_eval.ok_or_else(|| {
                Error::InvalidArgument("external_test policy needs an evaluation set".into())
            })?;
            if !labeled.is_compatible(eval) {
                return Err(Error::Incompatible(
                    "evaluation set differs in dimension or class count".into(),
                ));
            }
            (
                labeled.clone(),
                Evaluator::new(eval.clone(), config.measure, config.decision_threshold)?,
            )
        }
        EvalPolicy::InternalValidation => {
            let rows: Vec<&[u8]> = (0..labeled.len()).map(|i| labeled.labels(i)).collect();
            let held = stratified_selection(
                &rows,
                labeled.num_classes(),
                config.validation_fraction,
                config.seed,
                4,
            )
            .map_err(|e| {
                Error::InvalidArgument(format!(
                    "cannot carve a validation slice from {} labeled instances: {e}",
                    labeled.len()
                ))
            })?;
            let train_idx: Vec<usize> = (0..labeled.len()).filter(|&i| !held[i]).collect();
            let val_idx: Vec<usize> = (0..labeled.len()).filter(|&i| held[i]).collect();
            (
                labeled.select(&train_idx),
                Evaluator::new(
                    labeled.select(&val_idx),
                    config.measure,
                    config.decision_threshold,
                )?,
            )
        }
    };
    if let Some(id) = pool.ids().find(|id| evaluator.contains_id(id)) {
        return Err(Error::Incompatible(format!(
            "instance `{id}` is in both the pool and the evaluation set"
        )));
    }

    let num_classes = labeled.num_classes();
    let spec = config.measure;
    let (mut profiles, mut warnings) =
        build_profiles(&train, config.similarity_kind, config.similarity_calc_type)?;
    let baseline = trainer.train(&train)?;
    let baseline_measurement = evaluator.measure(&baseline)?;
    let initial_measure = baseline_measurement.value;
    let mut best = initial_measure;
    let mut best_per_class = baseline_measurement.per_class;

    let mut pool = pool.clone();
    let extra_validation = labeled.len() - train.len();
    let factors = |p: &[ClassSimilarityProfile]| p.iter().map(|p| p.factor).collect::<Vec<_>>();
    let mut history = vec![MetricHistoryRecord {
        iteration: 0,
        selected_class: None,
        candidate_count: 0,
        accepted: false,
        measure_value: initial_measure,
        factors: factors(&profiles),
        labeled_size: labeled.len(),
        unlabeled_size: pool.len(),
    }];
    let mut added: Vec<AddedInstance> = Vec::new();
    let mut added_instances: Vec<Instance> = Vec::new();
    let mut rejected_count = 0;
    let mut stop_reason = StopReason::Completed;
    let mut rng = rng_for(config.seed, 3);
    let mut warned_empty = vec![false; num_classes];

    for iteration in 1..=config.num_iterations {
        if pool.is_empty() {
            stop_reason = StopReason::PoolExhausted;
            break;
        }
        let counts = train.class_counts();
        let rho: Vec<f64> = match &best_per_class {
            Some(values) => values
                .iter()
                .map(|&v| performance_factor(v, spec.orientation()))
                .collect::<Result<_>>()?,
            None => {
                let v = spec.normalized(best, num_classes);
                vec![performance_factor(v, spec.orientation())?; num_classes]
            }
        };
        let needs: Vec<f64> = (0..num_classes)
            .map(|c| required_instances(train.len(), config.balance_ratio, counts[c], rho[c]))
            .collect();
        let Some(need) = selection_probabilities(&needs) else {
            stop_reason = StopReason::Balanced;
            break;
        };
        let class = draw_class(&need, &mut rng);
        if counts[class] == 0 && !warned_empty[class] {
            warned_empty[class] = true;
            let msg = format!("class {class} has no labeled members; its searches come back empty");
            log::warn!("{msg}");
            warnings.push(msg);
        }

        let found = find_candidates(
            &pool,
            &train,
            class,
            &profiles,
            config.batch_size,
            config.similarity_kind,
            &mut rng,
        )?;

        let mut accepted = false;
        let mut measure_value = best;
        if !found.is_empty() {
            let indices: Vec<usize> = found.iter().map(|c| c.pool_index).collect();
            let removed = pool.take(&indices);
            let vectors: Vec<&[f64]> = removed.iter().map(|i| i.vector.as_slice()).collect();
            let proposals =
                propose_labels(&vectors, &train, &profiles, config.similarity_kind, class)?;
            let candidates: Vec<Instance> = removed
                .iter()
                .zip(&proposals)
                .map(|(inst, p)| {
                    Instance::labeled(inst.id.clone(), inst.vector.clone(), p.labels.clone())
                })
                .collect();
            let step = improvement_step(trainer, &train, &candidates, &evaluator, best)?;
            measure_value = step.measurement.value;
            if step.accepted {
                accepted = true;
                best = step.measurement.value;
                best_per_class = step.measurement.per_class;
                for (inst, proposal) in candidates.into_iter().zip(proposals) {
                    added.push(AddedInstance {
                        id: inst.id.clone(),
                        iteration,
                        selected_class: class,
                        proposal,
                    });
                    train.push(inst.clone())?;
                    added_instances.push(inst);
                }
            } else {
                rejected_count += candidates.len();
            }
        }
        profiles[class].record_outcome(accepted);
        history.push(MetricHistoryRecord {
            iteration,
            selected_class: Some(class),
            candidate_count: found.len(),
            accepted,
            measure_value,
            factors: factors(&profiles),
            labeled_size: train.len() + extra_validation,
            unlabeled_size: pool.len(),
        });
    }

    let mut final_labeled = labeled.clone();
    for inst in added_instances {
        final_labeled.push(inst)?;
    }
    Ok(OversampleOutcome {
        labeled: final_labeled,
        pool,
        history,
        added,
        measure: spec,
        initial_measure,
        final_measure: best,
        rejected_count,
        stop_reason,
        warnings,
        class_names: labeled.header().class_names.clone(),
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Compact run summary written next to the outcome files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OversampleSummary {
    pub measure: MeasureSpec,
    pub initial_measure: f64,
    pub final_measure: f64,
    /// `(final - initial) / initial`; absent when the initial value is 0.
    pub improvement: Option<f64>,
    pub instances_added: usize,
    pub iterations_run: usize,
    pub accepted_iterations: usize,
    pub rejected_candidates: usize,
    pub initial_labeled_size: usize,
    pub final_labeled_size: usize,
    pub remaining_pool_size: usize,
    pub stop_reason: StopReason,
    pub wall_clock_seconds: f64,
}

pub const HISTORY_FILE: &str = "history.csv";
pub const LABELED_FILE: &str = "labeled.jsonl";
pub const POOL_FILE: &str = "pool.jsonl";
pub const ADDED_FILE: &str = "added.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

impl OversampleOutcome {
    pub fn summary(&self) -> OversampleSummary {
        OversampleSummary {
            measure: self.measure,
            initial_measure: self.initial_measure,
            final_measure: self.final_measure,
            improvement: percent_improvement(self.initial_measure, self.final_measure).ok(),
            instances_added: self.added.len(),
            iterations_run: self.history.len() - 1,
            accepted_iterations: self.history.iter().filter(|r| r.accepted).count(),
            rejected_candidates: self.rejected_count,
            initial_labeled_size: self.labeled.len() - self.added.len(),
            final_labeled_size: self.labeled.len(),
            remaining_pool_size: self.pool.len(),
            stop_reason: self.stop_reason,
            wall_clock_seconds: self.elapsed_seconds,
        }
    }

    /// Writes labeled set, remaining pool, added-instance audit, history
    /// CSV and summary into `dir`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.labeled.write(dir.join(LABELED_FILE))?;
        self.pool.write(dir.join(POOL_FILE))?;
        write_history_csv(dir.join(HISTORY_FILE), &self.history, &self.class_names)?;

        let path = dir.join(ADDED_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for a in &self.added {
            serde_json::to_writer(&mut w, a)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(SUMMARY_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(file, &self.summary())?;
        Ok(())
    }
}

/// History as CSV: `iteration, class, candidates, accepted, measure,
/// labeled_size, unlabeled_size`, then one `factor_<class>` column per
/// class. The baseline row has an empty class field.
pub fn write_history_csv(
    path: impl AsRef<Path>,
    history: &[MetricHistoryRecord],
    class_names: &[String],
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = [
        "iteration",
        "class",
        "candidates",
        "accepted",
        "measure",
        "labeled_size",
        "unlabeled_size",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(class_names.iter().map(|c| format!("factor_{c}")));
    w.write_record(&header)?;
    for r in history {
        let mut row = vec![
            r.iteration.to_string(),
            r.selected_class.map(|c| c.to_string()).unwrap_or_default(),
            r.candidate_count.to_string(),
            u8::from(r.accepted).to_string(),
            r.measure_value.to_string(),
            r.labeled_size.to_string(),
            r.unlabeled_size.to_string(),
        ];
        row.extend(r.factors.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_history_csv(path: impl AsRef<Path>) -> Result<Vec<MetricHistoryRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| Error::MalformedRecord {
            line,
            message: format!("bad {what}"),
        };
        let field = |k: usize| rec.get(k).ok_or_else(|| bad("column count"));
        let num =
            |k: usize, what: &str| -> Result<usize> { field(k)?.parse().map_err(|_| bad(what)) };
        let class = field(1)?;
        out.push(MetricHistoryRecord {
            iteration: num(0, "iteration")?,
            selected_class: if class.is_empty() {
                None
            } else {
                Some(class.parse().map_err(|_| bad("class"))?)
            },
            candidate_count: num(2, "candidates")?,
            accepted: match field(3)? {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return Err(bad("accepted flag")),
            },
            measure_value: field(4)?.parse().map_err(|_| bad("measure"))?,
            labeled_size: num(5, "labeled_size")?,
            unlabeled_size: num(6, "unlabeled_size")?,
            factors: (7..rec.len())
                .map(|k| field(k)?.parse().map_err(|_| bad("factor")))
                .collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Header;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn performance_factor_cases() {
        assert_eq!(performance_factor(1.0, Orientation::Maximize).unwrap(), 0.0);
        assert!((performance_factor(0.6, Orientation::Maximize).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(performance_factor(0.3, Orientation::Minimize).unwrap(), 0.3);
        assert!(performance_factor(1.5, Orientation::Minimize).is_err());
    }

    #[test]
    fn required_instance_cases() {
        assert!((required_instances(135, 0.2, 10, 1.0) - 34.0).abs() < 1e-12);
        assert!((required_instances(135, 0.2, 10, 0.4) - 13.6).abs() < 1e-12);
        assert_eq!(required_instances(135, 0.2, 50, 1.0), 0.0);
    }

    #[test]
    fn selection_cases() {
        let need = selection_probabilities(&[30.0, 10.0, 0.0]).unwrap();
        assert_eq!(need.probabilities, vec![0.75, 0.25, 0.0]);
        let one = selection_probabilities(&[0.0, 2.5]).unwrap();
        assert_eq!(one.probabilities, vec![0.0, 1.0]);
        assert!(selection_probabilities(&[0.0, 0.0]).is_none());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| draw_class(&one, &mut rng) == 1));
    }

    #[test]
    fn draw_frequencies_within_three_sigma() {
        let need = selection_probabilities(&[5.0, 3.0, 1.5, 0.5, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[draw_class(&need, &mut rng)] += 1;
        }
        for (k, &p) in need.probabilities.iter().enumerate() {
            let expected = p * n as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (counts[k] as f64 - expected).abs() <= 3.0 * sigma,
                "class {k}: {} vs {expected}",
                counts[k]
            );
        }
        assert_eq!(counts[4], 0);
    }

    fn two_class_reference() -> (LabeledSet, Vec<ClassSimilarityProfile>) {
        let header = Header::anonymous(2, 2);
        let set = LabeledSet::from_instances(
            header,
            vec![
                Instance::labeled("a0", vec![1.0, 0.0], vec![1, 0]),
                Instance::labeled("a1", vec![0.5, 1.0], vec![1, 0]),
                Instance::labeled("b0", vec![0.0, 1.0], vec![0, 1]),
                Instance::labeled("b1", vec![1.0, 0.5], vec![0, 1]),
            ],
        )
        .unwrap();
        let profiles = build_profiles(&set, SimilarityKind::Cosine, SimilarityCalcType::Average)
            .unwrap()
            .0;
        (set, profiles)
    }

    #[test]
    fn exact_copies_are_found() {
        let (set, profiles) = two_class_reference();
        let pool = UnlabeledPool::from_instances(
            set.header().clone(),
            vec![
                Instance::unlabeled("p0", vec![0.0, 1.0]),
                Instance::unlabeled("p1", vec![1.0, 0.1]),
                Instance::unlabeled("p2", vec![0.1, 1.0]),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let found = find_candidates(
            &pool,
            &set,
            0,
            &profiles,
            2,
            SimilarityKind::Cosine,
            &mut rng,
        )
        .unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(pool.instances()[found[0].pool_index].id, "p1");
        let mut again = ChaCha8Rng::seed_from_u64(3);
        let repeat = find_candidates(
            &pool,
            &set,
            0,
            &profiles,
            2,
            SimilarityKind::Cosine,
            &mut again,
        )
        .unwrap();
        assert_eq!(found, repeat);
    }

    #[test]
    fn unreachable_threshold_finds_nothing() {
        let (set, mut profiles) = two_class_reference();
        profiles[0].base_similarity = 1.0;
        profiles[0].factor = 1.0 + 1e-9;
        let pool = UnlabeledPool::from_instances(
            set.header().clone(),
            vec![Instance::unlabeled("p", vec![1.0, 0.1])],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let found = find_candidates(
            &pool,
            &set,
            0,
            &profiles,
            3,
            SimilarityKind::Cosine,
            &mut rng,
        )
        .unwrap();
        assert!(found.is_empty());
    }

    #[test]
    fn proposal_sets_every_passing_class_and_forces_selected() {
        let (set, profiles) = two_class_reference();
        // the diagonal is equally similar to both classes and clears both thresholds
        let diag = [1.0, 1.0];
        let p = propose_labels(&[&diag], &set, &profiles, SimilarityKind::Cosine, 0).unwrap();
        let s = p[0].similarities[0].unwrap();
        assert!(s >= p[0].thresholds[0] && s >= p[0].thresholds[1]);
        assert_eq!(p[0].labels, vec![1, 1]);

        let a = [1.0, 0.1];
        let p = propose_labels(&[&a], &set, &profiles, SimilarityKind::Cosine, 0).unwrap();
        assert_eq!(p[0].labels, vec![1, 0]);
        // forcing: selected class set even though similarity to class 1 is low
        let p = propose_labels(&[&a], &set, &profiles, SimilarityKind::Cosine, 1).unwrap();
        assert_eq!(p[0].labels, vec![1, 1]);
        assert!(p[0].similarities[1].unwrap() < p[0].thresholds[1]);
    }

    #[test]
    fn config_validation() {
        assert!(OversampleConfig::default().validate().is_ok());
        let bad = OversampleConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OversampleConfig {
            balance_ratio: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let json = r#"{"balance_ratio": 0.3, "similarity_kind": "cosine", "eval_policy": "external_test"}"#;
        let c: OversampleConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.balance_ratio, 0.3);
        assert_eq!(c.batch_size, 5);
        assert_eq!(c.eval_policy, EvalPolicy::ExternalTest);
    }

    #[test]
    fn history_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let history = vec![
            MetricHistoryRecord {
                iteration: 0,
                selected_class: None,
                candidate_count: 0,
                accepted: false,
                measure_value: 0.1 + 0.2,
                factors: vec![1.0, 1.3],
                labeled_size: 4,
                unlabeled_size: 9,
            },
            MetricHistoryRecord {
                iteration: 1,
                selected_class: Some(1),
                candidate_count: 2,
                accepted: true,
                measure_value: 0.5,
                factors: vec![1.0, 1.3000001],
                labeled_size: 6,
                unlabeled_size: 7,
            },
        ];
        write_history_csv(&path, &history, &["a".into(), "b".into()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "iteration,class,candidates,accepted,measure,labeled_size,unlabeled_size,factor_a,factor_b"
        ));
        assert_eq!(read_history_csv(&path).unwrap(), history);
    }
}
