//! Multi-label evaluation measures.
//!
//! Classification measures compare a binary prediction matrix with the
//! truth; ranking measures compare per-class scores with the truth. All
//! functions take `n x L` matrices with one column per class.
//!
//! Conventions:
//! * a 0/0 precision or recall is 0 and is counted in `zero_divisions`;
//!   F1 is 0 when precision + recall is 0
//! * ranks are 1-based and descending; the rank of label `j` is the number
//!   of labels scoring at least `P[j]`, so tied labels share the worst rank
//! * ranking loss gives half credit to tied (relevant, irrelevant) pairs
//! * one-error breaks argmax ties toward the lowest class index

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{LabelMatrix, ScoreMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    SubsetAccuracy,
    Accuracy,
    HammingLoss,
    Precision,
    Recall,
    F1,
    OneError,
    Coverage,
    RankingLoss,
    AveragePrecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Micro,
    Macro,
    Weighted,
    Samples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Maximize,
    Minimize,
}

impl Measure {
    pub const ALL: [Measure; 10] = [
        Measure::SubsetAccuracy,
        Measure::Accuracy,
        Measure::HammingLoss,
        Measure::Precision,
        Measure::Recall,
        Measure::F1,
        Measure::OneError,
        Measure::Coverage,
        Measure::RankingLoss,
        Measure::AveragePrecision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::SubsetAccuracy => "subset_accuracy",
            Measure::Accuracy => "accuracy",
            Measure::HammingLoss => "hamming_loss",
            Measure::Precision => "precision",
            Measure::Recall => "recall",
            Measure::F1 => "f1",
            Measure::OneError => "one_error",
            Measure::Coverage => "coverage",
            Measure::RankingLoss => "ranking_loss",
            Measure::AveragePrecision => "average_precision",
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            Measure::HammingLoss | Measure::OneError | Measure::Coverage | Measure::RankingLoss => {
                Orientation::Minimize
            }
            _ => Orientation::Maximize,
        }
    }

    /// Precision, recall and F1 take an averaging scheme.
    pub fn is_averaged(self) -> bool {
        matches!(self, Measure::Precision | Measure::Recall | Measure::F1)
    }

    pub fn is_ranking(self) -> bool {
        matches!(
            self,
            Measure::OneError
                | Measure::Coverage
                | Measure::RankingLoss
                | Measure::AveragePrecision
        )
    }
}

impl FromStr for Measure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        let alias = match key.as_str() {
            "emr" | "exact_match" => "subset_accuracy",
            "f1_score" => "f1",
            k => k,
        };
        Measure::ALL
            .into_iter()
            .find(|m| m.as_str() == alias)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown measure `{s}`")))
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Averaging {
    pub const ALL: [Averaging; 4] = [
        Averaging::Micro,
        Averaging::Macro,
        Averaging::Weighted,
        Averaging::Samples,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Averaging::Micro => "micro",
            Averaging::Macro => "macro",
            Averaging::Weighted => "weighted",
            Averaging::Samples => "samples",
        }
    }
}

impl FromStr for Averaging {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Averaging::ALL
            .into_iter()
            .find(|a| a.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown averaging `{s}`")))
    }
}

/// A measure plus, for precision/recall/F1, its averaging scheme.
/// Written as `f1.weighted`, `hamming_loss`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MeasureSpec {
    pub measure: Measure,
    pub averaging: Option<Averaging>,
}

impl MeasureSpec {
    pub fn new(measure: Measure, averaging: Option<Averaging>) -> Result<Self> {
        match (measure.is_averaged(), averaging) {
            (true, None) => Err(Error::InvalidArgument(format!(
                "{measure} needs an averaging scheme"
            ))),
            (false, Some(a)) => Err(Error::InvalidArgument(format!(
                "{measure} does not take averaging `{}`",
                a.as_str()
            ))),
            _ => Ok(Self { measure, averaging }),
        }
    }

    pub fn orientation(&self) -> Orientation {
        self.measure.orientation()
    }

    /// True if `candidate` is strictly better than `incumbent`.
    pub fn improves(&self, candidate: f64, incumbent: f64) -> bool {
        match self.orientation() {
            Orientation::Maximize => candidate > incumbent,
            Orientation::Minimize => candidate < incumbent,
        }
    }

    /// Maps a value onto [0, 1]; coverage is divided by the class count.
    pub fn normalized(&self, value: f64, num_classes: usize) -> f64 {
        if self.measure == Measure::Coverage {
            value / num_classes as f64
        } else {
            value
        }
    }
}

impl Default for MeasureSpec {
    fn default() -> Self {
        Self {
            measure: Measure::F1,
            averaging: Some(Averaging::Weighted),
        }
    }
}

impl fmt::Display for MeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.averaging {
            Some(a) => write!(f, "{}.{}", self.measure, a.as_str()),
            None => write!(f, "{}", self.measure),
        }
    }
}

impl FromStr for MeasureSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (m, a) = match s.split_once('.') {
            Some((m, a)) => (m, Some(a.parse::<Averaging>()?)),
            None => (s, None),
        };
        MeasureSpec::new(m.parse()?, a)
    }
}

impl Serialize for MeasureSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MeasureSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_nonempty<T: Copy>(m: &crate::matrix::Matrix<T>) -> Result<()> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    Ok(())
}

/// Fraction of rows predicted exactly.
pub fn subset_accuracy(truth: &LabelMatrix, pred: &LabelMatrix) -> Result<f64> {
    truth.ensure_same_shape(pred)?;
    check_nonempty(truth)?;
    let exact = truth
        .iter_rows()
        .zip(pred.iter_rows())
        .filter(|(t, p)| t == p)
        .count();
    Ok(exact as f64 / truth.rows() as f64)
}

/// Fraction of label cells predicted incorrectly.
pub fn hamming_loss(truth: &LabelMatrix, pred: &LabelMatrix) -> Result<f64> {
    truth.ensure_same_shape(pred)?;
    check_nonempty(truth)?;
    let wrong = truth
        .as_slice()
        .iter()
        .zip(pred.as_slice())
        .filter(|(t, p)| t != p)
        .count();
    Ok(wrong as f64 / truth.as_slice().len() as f64)
}

/// Fraction of label cells predicted correctly (`1 - hamming_loss`).
pub fn label_accuracy(truth: &LabelMatrix, pred: &LabelMatrix) -> Result<f64> {
    Ok(1.0 - hamming_loss(truth, pred)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of 0/0 precision or recall terms that were set to 0.
    pub zero_divisions: usize,
}

impl Prf {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let mut zero_divisions = 0;
        let mut ratio = |num: usize, den: usize| {
            if den == 0 {
                zero_divisions += 1;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Prf {
            precision,
            recall,
            f1: harmonic_f1(precision, recall),
            zero_divisions,
        }
    }

    pub fn get(&self, measure: Measure) -> Option<f64> {
        match measure {
            Measure::Precision => Some(self.precision),
            Measure::Recall => Some(self.recall),
            Measure::F1 => Some(self.f1),
            _ => None,
        }
    }
}

/// `2PR / (P + R)`, or 0 when both are 0.
pub fn harmonic_f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Default, Clone, Copy)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn class_counts(truth: &LabelMatrix, pred: &LabelMatrix) -> Vec<Counts> {
    let mut counts = vec![Counts::default(); truth.cols()];
    for (t, p) in truth.iter_rows().zip(pred.iter_rows()) {
        for (c, (&a, &b)) in t.iter().zip(p).enumerate() {
            match (a, b) {
                (1, 1) => counts[c].tp += 1,
                (0, 1) => counts[c].fp += 1,
                (1, 0) => counts[c].fn_ += 1,
                _ => {}
            }
        }
    }
    counts
}

/// Precision, recall and F1 for each class.
pub fn per_class_prf1(truth: &LabelMatrix, pred: &LabelMatrix) -> Result<Vec<Prf>> {
    truth.ensure_same_shape(pred)?;
    check_nonempty(truth)?;
    Ok(class_counts(truth, pred)
        .into_iter()
        .map(|c| Prf::from_counts(c.tp, c.fp, c.fn_))
        .collect())
}

/// Precision, recall and F1 under the given averaging scheme.
pub fn prf1(truth: &LabelMatrix, pred: &LabelMatrix, averaging: Averaging) -> Result<Prf> {
    truth.ensure_same_shape(pred)?;
    check_nonempty(truth)?;
    match averaging {
        Averaging::Micro => {
            let pooled = class_counts(truth, pred)
                .into_iter()
                .fold(Counts::default(), |acc, c| Counts {
                    tp: acc.tp + c.tp,
                    fp: acc.fp + c.fp,
                    fn_: acc.fn_ + c.fn_,
                });
            Ok(Prf::from_counts(pooled.tp, pooled.fp, pooled.fn_))
        }
        Averaging::Macro | Averaging::Weighted => {
            let counts = class_counts(truth, pred);
            let per_class: Vec<Prf> = counts
                .iter()
                .map(|c| Prf::from_counts(c.tp, c.fp, c.fn_))
                .collect();
            let weights: Vec<f64> = if averaging == Averaging::Macro {
                vec![1.0; counts.len()]
            } else {
                counts.iter().map(|c| (c.tp + c.fn_) as f64).collect()
            };
            let mut zero_divisions: usize = per_class.iter().map(|p| p.zero_divisions).sum();
            let total: f64 = weights.iter().sum();
            if total == 0.0 {
                zero_divisions += 1;
                return Ok(Prf {
                    zero_divisions,
                    ..Prf::default()
                });
            }
            let avg = |get: fn(&Prf) -> f64| {
                per_class
                    .iter()
                    .zip(&weights)
                    .map(|(p, w)| get(p) * w)
                    .sum::<f64>()
                    / total
            };
            Ok(Prf {
                precision: avg(|p| p.precision),
                recall: avg(|p| p.recall),
                f1: avg(|p| p.f1),
                zero_divisions,
            })
        }
        Averaging::Samples => {
            let mut sum = Prf::default();
            for (t, p) in truth.iter_rows().zip(pred.iter_rows()) {
                let mut c = Counts::default();
                for (&a, &b) in t.iter().zip(p) {
                    match (a, b) {
                        (1, 1) => c.tp += 1,
                        (0, 1) => c.fp += 1,
                        (1, 0) => c.fn_ += 1,
                        _ => {}
                    }
                }
                let row = Prf::from_counts(c.tp, c.fp, c.fn_);
                sum.precision += row.precision;
                sum.recall += row.recall;
                sum.f1 += row.f1;
                sum.zero_divisions += row.zero_divisions;
            }
            let n = truth.rows() as f64;
            Ok(Prf {
                precision: sum.precision / n,
                recall: sum.recall / n,
                f1: sum.f1 / n,
                zero_divisions: sum.zero_divisions,
            })
        }
    }
}

fn ranking_inputs(truth: &LabelMatrix, scores: &ScoreMatrix, need_negative: bool) -> Result<()> {
    truth.ensure_same_shape(scores)?;
    check_nonempty(truth)?;
    for (i, row) in truth.iter_rows().enumerate() {
        if !row.contains(&1) {
            return Err(Error::Undefined(format!("row {i} has no positive label")));
        }
        if need_negative && !row.contains(&0) {
            return Err(Error::Undefined(format!("row {i} has no negative label")));
        }
    }
    Ok(())
}

/// 1-based descending rank of `scores[j]`, ties taking the worst rank.
fn rank_of(scores: &[f64], j: usize) -> usize {
    scores.iter().filter(|&&s| s >= scores[j]).count()
}

/// Fraction of rows whose top-scored label is not a true label.
pub fn one_error(truth: &LabelMatrix, scores: &ScoreMatrix) -> Result<f64> {
    ranking_inputs(truth, scores, false)?;
    let misses = truth
        .iter_rows()
        .zip(scores.iter_rows())
        .filter(|(t, s)| {
            let mut top = 0;
            for (j, &v) in s.iter().enumerate() {
                if v > s[top] {
                    top = j;
                }
            }
            t[top] == 0
        })
        .count();
    Ok(misses as f64 / truth.rows() as f64)
}

/// Mean over rows of the deepest rank needed to reach every true label.
pub fn coverage(truth: &LabelMatrix, scores: &ScoreMatrix) -> Result<f64> {
    ranking_inputs(truth, scores, false)?;
    let total: usize = truth
        .iter_rows()
        .zip(scores.iter_rows())
        .map(|(t, s)| {
            (0..t.len())
                .filter(|&j| t[j] == 1)
                .map(|j| rank_of(s, j))
                .max()
                .unwrap_or(0)
        })
        .sum();
    Ok(total as f64 / truth.rows() as f64)
}

/// Mean over rows of the fraction of (relevant, irrelevant) label pairs
/// scored in the wrong order.
pub fn ranking_loss(truth: &LabelMatrix, scores: &ScoreMatrix) -> Result<f64> {
    ranking_inputs(truth, scores, true)?;
    let mut total = 0.0;
    for (t, s) in truth.iter_rows().zip(scores.iter_rows()) {
        let mut wrong = 0.0;
        let mut pairs = 0usize;
        for r in (0..t.len()).filter(|&j| t[j] == 1) {
            for q in (0..t.len()).filter(|&j| t[j] == 0) {
                pairs += 1;
                if s[r] < s[q] {
                    wrong += 1.0;
                } else if s[r] == s[q] {
                    wrong += 0.5;
                }
            }
        }
        total += wrong / pairs as f64;
    }
    Ok(total / truth.rows() as f64)
}

/// Label-ranking average precision.
pub fn average_precision(truth: &LabelMatrix, scores: &ScoreMatrix) -> Result<f64> {
    ranking_inputs(truth, scores, true)?;
    let mut total = 0.0;
    for (t, s) in truth.iter_rows().zip(scores.iter_rows()) {
        let relevant: Vec<usize> = (0..t.len()).filter(|&j| t[j] == 1).collect();
        let row: f64 = relevant
            .iter()
            .map(|&j| {
                let above = relevant.iter().filter(|&&k| s[k] >= s[j]).count();
                above as f64 / rank_of(s, j) as f64
            })
            .sum();
        total += row / relevant.len() as f64;
    }
    Ok(total / truth.rows() as f64)
}

/// Relative change `(p1 - p0) / p0`.
pub fn percent_improvement(p0: f64, p1: f64) -> Result<f64> {
    if p0 == 0.0 || !p0.is_finite() || !p1.is_finite() {
        return Err(Error::Undefined(format!(
            "relative improvement from {p0} to {p1}"
        )));
    }
    Ok((p1 - p0) / p0)
}

/// Value of one measure. Classification measures read `pred`, ranking
/// measures read `scores`.
pub fn evaluate(
    spec: MeasureSpec,
    truth: &LabelMatrix,
    pred: &LabelMatrix,
    scores: &ScoreMatrix,
) -> Result<f64> {
    match spec.measure {
        Measure::SubsetAccuracy => subset_accuracy(truth, pred),
        Measure::Accuracy => label_accuracy(truth, pred),
        Measure::HammingLoss => hamming_loss(truth, pred),
        Measure::Precision | Measure::Recall | Measure::F1 => {
            let averaging = spec
                .averaging
                .ok_or_else(|| Error::InvalidArgument(format!("{spec} needs averaging")))?;
            let prf = prf1(truth, pred, averaging)?;
            Ok(prf.get(spec.measure).expect("averaged measure"))
        }
        Measure::OneError => one_error(truth, scores),
        Measure::Coverage => coverage(truth, scores),
        Measure::RankingLoss => ranking_loss(truth, scores),
        Measure::AveragePrecision => average_precision(truth, scores),
    }
}

/// Per-class values for measures that decompose by class.
pub fn per_class_values(
    spec: MeasureSpec,
    truth: &LabelMatrix,
    pred: &LabelMatrix,
) -> Result<Option<Vec<f64>>> {
    if !spec.measure.is_averaged() {
        return Ok(None);
    }
    Ok(Some(
        per_class_prf1(truth, pred)?
            .iter()
            .map(|p| p.get(spec.measure).expect("averaged measure"))
            .collect(),
    ))
}

/// Every measure under every applicable averaging, keyed `measure` or
/// `measure.averaging`. Ranking measures that are undefined on the input
/// are omitted and listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_samples: usize,
    pub n_classes: usize,
    pub zero_divisions: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub undefined: Vec<String>,
    #[serde(flatten)]
    pub values: BTreeMap<String, f64>,
}

impl EvaluationReport {
    pub fn compute(truth: &LabelMatrix, pred: &LabelMatrix, scores: &ScoreMatrix) -> Result<Self> {
        truth.ensure_same_shape(pred)?;
        truth.ensure_same_shape(scores)?;
        let mut values = BTreeMap::new();
        let mut undefined = Vec::new();
        let mut zero_divisions = 0;
        for measure in Measure::ALL {
            if measure.is_averaged() {
                for a in Averaging::ALL {
                    let prf = prf1(truth, pred, a)?;
                    if measure == Measure::F1 {
                        zero_divisions += prf.zero_divisions;
                    }
                    values.insert(
                        format!("{measure}.{}", a.as_str()),
                        prf.get(measure).expect("averaged"),
                    );
                }
                continue;
            }
            let spec = MeasureSpec::new(measure, None)?;
            match evaluate(spec, truth, pred, scores) {
                Ok(v) => {
                    values.insert(measure.to_string(), v);
                }
                Err(Error::Undefined(why)) if measure.is_ranking() => {
                    undefined.push(format!("{measure}: {why}"));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Self {
            n_samples: truth.rows(),
            n_classes: truth.cols(),
            zero_divisions,
            undefined,
            values,
        })
    }

    pub fn get(&self, spec: MeasureSpec) -> Option<f64> {
        self.values.get(&spec.to_string()).copied()
    }
}
