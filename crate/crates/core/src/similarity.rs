//! Pairwise similarity scores, per-class base similarities, and the adaptive
//! factor that turns a base similarity into an acceptance threshold.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};

/// Lower bound applied to every similarity score.
pub const SIMILARITY_FLOOR: f64 = 1e-6;

/// Hard ceiling on the similarity factor; at 2 the update rule stops being
/// a contraction.
pub const FACTOR_CEILING: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Cosine,
    Euclidean,
    JensenShannon,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 3] = [
        SimilarityKind::Euclidean,
        SimilarityKind::Cosine,
        SimilarityKind::JensenShannon,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::Euclidean => "euclidean",
            SimilarityKind::JensenShannon => "jensen_shannon",
        }
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cosine" => Ok(SimilarityKind::Cosine),
            "euclidean" => Ok(SimilarityKind::Euclidean),
            "jensen_shannon" | "js" => Ok(SimilarityKind::JensenShannon),
            other => Err(Error::InvalidArgument(format!(
                "unknown similarity kind `{other}`"
            ))),
        }
    }
}

/// How the array of pairwise scores inside a class collapses to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityCalcType {
    /// Arithmetic mean.
    Average,
    /// 75th percentile.
    SafeInterval,
}

impl SimilarityCalcType {
    pub const ALL: [SimilarityCalcType; 2] = [
        SimilarityCalcType::Average,
        SimilarityCalcType::SafeInterval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityCalcType::Average => "average",
            SimilarityCalcType::SafeInterval => "safe_interval",
        }
    }
}

impl fmt::Display for SimilarityCalcType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimilarityCalcType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "average" | "mean" => Ok(SimilarityCalcType::Average),
            "safe_interval" => Ok(SimilarityCalcType::SafeInterval),
            other => Err(Error::InvalidArgument(format!(
                "unknown similarity calculation type `{other}`"
            ))),
        }
    }
}

fn clamp_score(s: f64) -> f64 {
    s.clamp(SIMILARITY_FLOOR, 1.0)
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn to_distribution(u: &[f64]) -> Vec<f64> {
    let min = u.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = u.iter().map(|x| x - min).collect();
    let total: f64 = shifted.iter().sum();
    if total > 0.0 {
        shifted.into_iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / u.len() as f64; u.len()]
    }
}

/// Jensen-Shannon distance in base 2, in [0, 1].
fn jensen_shannon_distance(p: &[f64], q: &[f64]) -> f64 {
    let mut div = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            div += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            div += 0.5 * b * (b / m).log2();
        }
    }
    div.clamp(0.0, 1.0).sqrt()
}

/// Similarity of two vectors in `[SIMILARITY_FLOOR, 1]`.
///
/// * cosine: raw cosine, floored
/// * euclidean: `1 / (1 + ||u - v||)`
/// * jensen_shannon: `1 - JS distance` after shifting each vector to be
///   nonnegative and normalizing it to unit mass
pub fn pair_similarity(u: &[f64], v: &[f64], kind: SimilarityKind) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "vector lengths differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.is_empty() {
        return Err(Error::InvalidArgument("empty vectors".into()));
    }
    match kind {
        SimilarityKind::Cosine => {
            let nu = dot(u, u).sqrt();
            let nv = dot(v, v).sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::ZeroVector);
            }
            if u == v {
                return Ok(1.0);
            }
            Ok(clamp_score(dot(u, v) / (nu * nv)))
        }
        SimilarityKind::Euclidean => {
            let d: f64 = u
                .iter()
                .zip(v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            Ok(clamp_score(1.0 / (1.0 + d)))
        }
        SimilarityKind::JensenShannon => {
            if u == v {
                return Ok(1.0);
            }
            let p = to_distribution(u);
            let q = to_distribution(v);
            Ok(clamp_score(1.0 - jensen_shannon_distance(&p, &q)))
        }
    }
}

/// Percentile of an ascending-sorted array, linearly interpolating between
/// the closest ranks at position `q * (n - 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Collapses a score array to a single value per the calculation type.
pub fn reduce_scores(mut scores: Vec<f64>, calc: SimilarityCalcType) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    match calc {
        SimilarityCalcType::Average => Some(scores.iter().sum::<f64>() / scores.len() as f64),
        SimilarityCalcType::SafeInterval => {
            scores.sort_by(f64::total_cmp);
            percentile(&scores, 0.75)
        }
    }
}

/// All pairwise scores among `members`, ordered by (i, j) with i < j.
fn pairwise_scores(
    labeled: &LabeledSet,
    members: &[usize],
    kind: SimilarityKind,
) -> Result<Vec<f64>> {
    let inst = labeled.instances();
    let rows: Vec<Vec<f64>> = (0..members.len())
        .into_par_iter()
        .map(|a| {
            let u = &inst[members[a]].vector;
            members[a + 1..]
                .iter()
                .map(|&b| pair_similarity(u, &inst[b].vector, kind))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Base similarity of one class: the pairwise scores among its labeled
/// members reduced by `calc`. `None` when the class has fewer than two
/// members.
pub fn class_similarity(
    labeled: &LabeledSet,
    class: usize,
    kind: SimilarityKind,
    calc: SimilarityCalcType,
) -> Result<Option<f64>> {
    if class >= labeled.num_classes() {
        return Err(Error::InvalidArgument(format!("no class {class}")));
    }
    let members = labeled.members(class);
    if members.len() < 2 {
        return Ok(None);
    }
    let scores = pairwise_scores(labeled, &members, kind)?;
    Ok(reduce_scores(scores, calc).map(clamp_score))
}

/// Mean similarity of `x` to the given member instances.
pub fn similarity_to_members(
    x: &[f64],
    labeled: &LabeledSet,
    members: &[usize],
    kind: SimilarityKind,
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::InvalidArgument(
            "no members to compare against".into(),
        ));
    }
    let inst = labeled.instances();
    let mut total = 0.0;
    for &m in members {
        total += pair_similarity(x, &inst[m].vector, kind)?;
    }
    Ok(total / members.len() as f64)
}

/// Mean similarity of `x` to every labeled member of `class`.
pub fn instance_class_similarity(
    x: &[f64],
    labeled: &LabeledSet,
    class: usize,
    kind: SimilarityKind,
) -> Result<f64> {
    let members = labeled.members(class);
    if members.is_empty() {
        return Err(Error::EmptyClass(class));
    }
    similarity_to_members(x, labeled, &members, kind)
}

/// Largest factor allowed for base similarity `s`: keeps the threshold
/// `s * f` within 1 and `f` below the ceiling.
pub fn max_factor(s: f64) -> f64 {
    (1.0 / s).clamp(1.0, FACTOR_CEILING)
}

/// `f = sqrt(1 / s)`, clamped into `[1, max_factor(s)]`.
pub fn initial_factor(s: f64) -> Result<f64> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "class similarity {s} outside (0, 1]"
        )));
    }
    Ok((1.0 / s).sqrt().clamp(1.0, max_factor(s)))
}

/// Unclamped factor update: `f (1 + (1 - f)^4)` after an accepted batch,
/// `f (1 - (1 - f)^4)` otherwise.
pub fn raw_update_factor(f: f64, accepted: bool) -> f64 {
    let step = (1.0 - f).powi(4);
    if accepted {
        f * (1.0 + step)
    } else {
        f * (1.0 - step)
    }
}

/// Factor update followed by clamping into `[1, max_factor(s)]`.
pub fn update_factor(f: f64, accepted: bool, s: f64) -> f64 {
    raw_update_factor(f, accepted).clamp(1.0, max_factor(s))
}

/// Base similarity, adaptive factor and resulting threshold of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSimilarityProfile {
    pub class: usize,
    pub base_similarity: f64,
    pub factor: f64,
    /// The base similarity is the fallback value because the class had
    /// fewer than two labeled members.
    pub defaulted: bool,
}

impl ClassSimilarityProfile {
    pub fn new(class: usize, base_similarity: f64, defaulted: bool) -> Result<Self> {
        Ok(Self {
            class,
            base_similarity,
            factor: initial_factor(base_similarity)?,
            defaulted,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.base_similarity * self.factor
    }

    pub fn record_outcome(&mut self, accepted: bool) {
        self.factor = update_factor(self.factor, accepted, self.base_similarity);
    }
}

/// Profiles for every class of `labeled`, with warnings for classes whose
/// base similarity fell back to the default (the mean of the computable
/// class similarities, or 1 when no class has two members).
pub fn build_profiles(
    labeled: &LabeledSet,
    kind: SimilarityKind,
    calc: SimilarityCalcType,
) -> Result<(Vec<ClassSimilarityProfile>, Vec<String>)> {
    let computed = (0..labeled.num_classes())
        .map(|c| class_similarity(labeled, c, kind, calc))
        .collect::<Result<Vec<_>>>()?;
    let known: Vec<f64> = computed.iter().flatten().copied().collect();
    let default = if known.is_empty() {
        1.0
    } else {
        known.iter().sum::<f64>() / known.len() as f64
    };
    let mut warnings = Vec::new();
    let profiles = computed
        .into_iter()
        .enumerate()
        .map(|(c, s)| {
            if s.is_none() {
                let msg = format!(
                    "class {c} has fewer than two labeled members; base similarity defaults to {default:.6}"
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            ClassSimilarityProfile::new(c, s.unwrap_or(default), s.is_none())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((profiles, warnings))
}
