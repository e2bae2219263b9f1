//! One-vs-rest L2-regularized logistic regression trained by full-batch
//! gradient descent from zero weights.
//!
//! Training sorts instances by id before accumulating, so the fitted
//! weights do not depend on the order of the training set. Each class is
//! fitted independently.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledSet};
use crate::error::{Error, Result};
use crate::matrix::{LabelMatrix, ScoreMatrix};

const DUMP_MAGIC: &str = "labelmine-ovr-logistic v1";

/// Anything that maps an instance vector to per-class scores in [0, 1].
pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;
    fn dimension(&self) -> usize;
    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn predict(&self, x: &[f64], threshold: f64) -> Result<Vec<u8>> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "decision threshold {threshold} outside (0, 1)"
            )));
        }
        Ok(self
            .predict_proba(x)?
            .into_iter()
            .map(|p| u8::from(p >= threshold))
            .collect())
    }

    fn score_matrix(&self, data: &Dataset) -> Result<ScoreMatrix> {
        let rows = data
            .instances()
            .par_iter()
            .map(|i| self.predict_proba(&i.vector))
            .collect::<Result<Vec<_>>>()?;
        ScoreMatrix::from_vec(
            data.len(),
            self.num_classes(),
            rows.into_iter().flatten().collect(),
        )
    }
}

/// Produces a fitted classifier from a labeled set.
pub trait Trainer: Send + Sync {
    type Model: Classifier;
    fn train(&self, data: &LabeledSet) -> Result<Self::Model>;
}

/// Thresholds a score matrix into a label matrix.
pub fn threshold_scores(scores: &ScoreMatrix, threshold: f64) -> LabelMatrix {
    scores.map(|p| u8::from(p >= threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingParams {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2: 1e-4,
            epochs: 300,
        }
    }
}

impl Trainer for TrainingParams {
    type Model = OvrLogistic;
    fn train(&self, data: &LabeledSet) -> Result<OvrLogistic> {
        OvrLogistic::train(data, self)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Dot product with a fixed four-lane accumulation order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Binary logistic objective for one class over a fixed design matrix.
///
/// Parameters are laid out as `dimension` weights followed by the bias.
/// The objective is the mean log-loss plus `l2 / 2 * ||w||^2` (bias not
/// penalized).
#[derive(Debug, Clone)]
pub struct BinaryProblem {
    features: Vec<f64>,
    dimension: usize,
    targets: Vec<f64>,
    l2: f64,
}

impl BinaryProblem {
    pub fn new(features: Vec<f64>, dimension: usize, targets: Vec<f64>, l2: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument("zero-dimension data".into()));
        }
        if features.len() != dimension * targets.len() || targets.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} feature values for {} targets of dimension {dimension}",
                features.len(),
                targets.len()
            )));
        }
        Ok(Self {
            features,
            dimension,
            targets,
            l2,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dimension..(i + 1) * self.dimension]
    }

    fn margin(&self, params: &[f64], i: usize) -> f64 {
        dot(&params[..self.dimension], self.row(i)) + params[self.dimension]
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let n = self.targets.len() as f64;
        let data: f64 = (0..self.targets.len())
            .map(|i| {
                let z = self.margin(params, i);
                softplus(z) - self.targets[i] * z
            })
            .sum();
        let w = &params[..self.dimension];
        data / n + 0.5 * self.l2 * dot(w, w)
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let d = self.dimension;
        let mut grad = vec![0.0; d + 1];
        for i in 0..self.targets.len() {
            let residual = sigmoid(self.margin(params, i)) - self.targets[i];
            for (g, x) in grad[..d].iter_mut().zip(self.row(i)) {
                *g += residual * x;
            }
            grad[d] += residual;
        }
        let n = self.targets.len() as f64;
        for (g, w) in grad[..d].iter_mut().zip(&params[..d]) {
            *g = *g / n + self.l2 * w;
        }
        grad[d] /= n;
        grad
    }

    /// Gradient descent from zero; returns the parameters and the objective
    /// value before each step plus the final one.
    pub fn descend(&self, learning_rate: f64, epochs: usize) -> (Vec<f64>, Vec<f64>) {
        let mut params = vec![0.0; self.dimension + 1];
        let mut trace = Vec::with_capacity(epochs + 1);
        for _ in 0..epochs {
            trace.push(self.loss(&params));
            let grad = self.gradient(&params);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= learning_rate * g;
            }
        }
        trace.push(self.loss(&params));
        (params, trace)
    }

    fn fit(&self, learning_rate: f64, epochs: usize) -> Vec<f64> {
        let mut params = vec![0.0; self.dimension + 1];
        for _ in 0..epochs {
            let grad = self.gradient(&params);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= learning_rate * g;
            }
        }
        params
    }
}

/// Per-class logistic models sharing one input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct OvrLogistic {
    dimension: usize,
    /// One row of `dimension + 1` values per class, bias last.
    weights: Vec<Vec<f64>>,
    /// False for classes with no positive training instance; those always
    /// score 0.
    trained: Vec<bool>,
}

impl OvrLogistic {
    pub fn train(data: &LabeledSet, params: &TrainingParams) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !(params.learning_rate > 0.0) || params.l2 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "bad training parameters {params:?}"
            )));
        }
        let d = data.dimension();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.sort_by(|&a, &b| data.instances()[a].id.cmp(&data.instances()[b].id));
        let features: Vec<f64> = order
            .iter()
            .flat_map(|&i| data.instances()[i].vector.iter().copied())
            .collect();

        let fitted: Vec<(Vec<f64>, bool)> = (0..data.num_classes())
            .into_par_iter()
            .map(|c| {
                let targets: Vec<f64> = order
                    .iter()
                    .map(|&i| f64::from(data.labels(i)[c]))
                    .collect();
                if !targets.contains(&1.0) {
                    return Ok((vec![0.0; d + 1], false));
                }
                let problem = BinaryProblem::new(features.clone(), d, targets, params.l2)?;
                Ok((problem.fit(params.learning_rate, params.epochs), true))
            })
            .collect::<Result<_>>()?;
        let (weights, trained) = fitted.into_iter().unzip();
        Ok(Self {
            dimension: d,
            weights,
            trained,
        })
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn is_trained(&self, class: usize) -> bool {
        self.trained[class]
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))
    }

    /// Text dump: a magic line, `L dimension`, then one line per class of
    /// `trained_flag w_1 .. w_D bias` in shortest round-trip notation.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{DUMP_MAGIC}")?;
        writeln!(w, "{} {}", self.weights.len(), self.dimension)?;
        for (row, &trained) in self.weights.iter().zip(&self.trained) {
            write!(w, "{}", u8::from(trained))?;
            for v in row {
                write!(w, " {v:e}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let bad = |line: usize, message: &str| Error::MalformedRecord {
            line,
            message: message.to_string(),
        };
        let mut lines = reader.lines();
        let mut next = |n: usize| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad(n, "unexpected end of model dump"))?
                .map_err(|e| Error::io("<model>", e))
        };
        if next(1)?.trim() != DUMP_MAGIC {
            return Err(bad(1, "not a model dump or unsupported version"));
        }
        let shape = next(2)?;
        let dims: Vec<usize> = shape
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(2, "bad shape line"))?;
        let [l, d] = dims[..] else {
            return Err(bad(2, "bad shape line"));
        };
        let mut weights = Vec::with_capacity(l);
        let mut trained = Vec::with_capacity(l);
        for c in 0..l {
            let line_no = c + 3;
            let line = next(line_no)?;
            let mut fields = line.split_whitespace();
            trained.push(match fields.next() {
                Some("1") => true,
                Some("0") => false,
                _ => return Err(bad(line_no, "bad trained flag")),
            });
            let row: Vec<f64> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(line_no, "bad weight"))?;
            if row.len() != d + 1 {
                return Err(bad(line_no, "wrong number of weights"));
            }
            weights.push(row);
        }
        Ok(Self {
            dimension: d,
            weights,
            trained,
        })
    }
}

impl Classifier for OvrLogistic {
    fn num_classes(&self) -> usize {
        self.weights.len()
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dimension {
            return Err(Error::InvalidArgument(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.dimension
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.trained)
            .map(|(w, &trained)| {
                if trained {
                    sigmoid(dot(&w[..self.dimension], x) + w[self.dimension])
                } else {
                    0.0
                }
            })
            .collect())
    }
}
