//! Python bindings for labelmine.
//!
//! Vectors and label matrices cross the boundary as nested lists; results
//! with many fields come back as dicts.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use labelmine::classifier::{threshold_scores, Classifier, OvrLogistic};
use labelmine::similarity::{self, SimilarityCalcType, SimilarityKind};
use labelmine::{
    dataset_stats, gaussian_clusters, kfold_split, metrics, split_labeled_unlabeled, EvalPolicy,
    EvaluationReport, Header, Instance, LabelMatrix, LabeledSet, MeasureSpec, OversampleConfig,
    ScoreMatrix, SyntheticSpec, TrainingParams, UnlabeledPool,
};

fn to_py(e: labelmine::Error) -> PyErr {
    match e {
        labelmine::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: std::str::FromStr<Err = labelmine::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// A labeled multi-label dataset.
#[pyclass(name = "LabeledSet", module = "labelmine", skip_from_py_object)]
#[derive(Clone)]
struct PyLabeledSet {
    inner: LabeledSet,
}

#[pymethods]
impl PyLabeledSet {
    #[new]
    #[pyo3(signature = (ids, vectors, labels, class_names=None))]
    fn new(
        ids: Vec<String>,
        vectors: Vec<Vec<f64>>,
        labels: Vec<Vec<u8>>,
        class_names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        if ids.len() != vectors.len() || ids.len() != labels.len() {
            return Err(PyValueError::new_err(
                "ids, vectors and labels differ in length",
            ));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let l = labels.first().map_or(0, Vec::len);
        let header = match class_names {
            Some(names) => Header::new(dim, names),
            None => Header::anonymous(dim, l),
        };
        let instances = ids
            .into_iter()
            .zip(vectors)
            .zip(labels)
            .map(|((id, v), y)| Instance::labeled(id, v, y))
            .collect();
        LabeledSet::from_instances(header, instances)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        LabeledSet::read(path)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        self.inner.write(path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.header().class_names.clone()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().map(str::to_owned).collect()
    }

    #[getter]
    fn vectors(&self) -> Vec<Vec<f64>> {
        self.inner
            .instances()
            .iter()
            .map(|i| i.vector.clone())
            .collect()
    }

    #[getter]
    fn labels(&self) -> Vec<Vec<u8>> {
        (0..self.inner.len())
            .map(|i| self.inner.labels(i).to_vec())
            .collect()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    fn select(&self, indices: Vec<usize>) -> PyResult<Self> {
        if indices.iter().any(|&i| i >= self.inner.len()) {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(Self {
            inner: self.inner.select(&indices),
        })
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_json(py, &dataset_stats(&self.inner).map_err(to_py)?)
    }

    /// Stratified split into `(labeled, pool, hidden_labels)`.
    fn split(
        &self,
        labeled_fraction: f64,
        seed: u64,
    ) -> PyResult<(Self, PyPool, Vec<(String, Vec<u8>)>)> {
        let s = split_labeled_unlabeled(&self.inner, labeled_fraction, seed).map_err(to_py)?;
        Ok((
            Self { inner: s.labeled },
            PyPool { inner: s.pool },
            s.hidden_labels.into_iter().collect(),
        ))
    }

    fn __repr__(&self) -> String {
        format!(
            "LabeledSet(n={}, dimension={}, classes={})",
            self.inner.len(),
            self.inner.dimension(),
            self.inner.num_classes()
        )
    }
}

/// An unlabeled pool of candidate instances.
#[pyclass(name = "UnlabeledPool", module = "labelmine", skip_from_py_object)]
#[derive(Clone)]
struct PyPool {
    inner: UnlabeledPool,
}

#[pymethods]
impl PyPool {
    #[new]
    fn new(ids: Vec<String>, vectors: Vec<Vec<f64>>, num_classes: usize) -> PyResult<Self> {
        if ids.len() != vectors.len() {
            return Err(PyValueError::new_err("ids and vectors differ in length"));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let instances = ids
            .into_iter()
            .zip(vectors)
            .map(|(id, v)| Instance::unlabeled(id, v))
            .collect();
        UnlabeledPool::from_instances(Header::anonymous(dim, num_classes), instances)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        UnlabeledPool::read(path)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        self.inner.write(path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().map(str::to_owned).collect()
    }
}

/// One-vs-rest logistic regression.
#[pyclass(name = "Classifier", module = "labelmine")]
struct PyClassifier {
    inner: OvrLogistic,
}

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    #[pyo3(signature = (data, learning_rate=0.1, l2=1e-4, epochs=300))]
    fn train(data: &PyLabeledSet, learning_rate: f64, l2: f64, epochs: usize) -> PyResult<Self> {
        let params = TrainingParams {
            learning_rate,
            l2,
            epochs,
        };
        OvrLogistic::train(&data.inner, &params)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        OvrLogistic::read(path)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        self.inner.write(path).map_err(to_py)
    }

    fn predict_proba(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.predict_proba(&x).map_err(to_py)
    }

    #[pyo3(signature = (x, threshold=0.5))]
    fn predict(&self, x: Vec<f64>, threshold: f64) -> PyResult<Vec<u8>> {
        self.inner.predict(&x, threshold).map_err(to_py)
    }

    /// Every measure on a labeled set.
    #[pyo3(signature = (data, threshold=0.5))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        data: &PyLabeledSet,
        threshold: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let scores = self.inner.score_matrix(&data.inner).map_err(to_py)?;
        let pred = threshold_scores(&scores, threshold);
        let report =
            EvaluationReport::compute(&data.inner.label_matrix(), &pred, &scores).map_err(to_py)?;
        to_json(py, &report)
    }
}

fn label_matrix(rows: &[Vec<u8>]) -> PyResult<LabelMatrix> {
    let rows: Vec<&[u8]> = rows.iter().map(Vec::as_slice).collect();
    LabelMatrix::from_rows(&rows).map_err(to_py)
}

fn score_matrix(rows: &[Vec<f64>]) -> PyResult<ScoreMatrix> {
    let rows: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    ScoreMatrix::from_rows(&rows).map_err(to_py)
}

/// Value of one measure, e.g. `"f1.macro"` or `"coverage"`. Ranking
/// measures need `scores`; when `pred` is omitted it is `scores >= 0.5`.
#[pyfunction]
#[pyo3(signature = (measure, truth, pred=None, scores=None))]
fn evaluate(
    measure: &str,
    truth: Vec<Vec<u8>>,
    pred: Option<Vec<Vec<u8>>>,
    scores: Option<Vec<Vec<f64>>>,
) -> PyResult<f64> {
    let spec: MeasureSpec = parse(measure)?;
    let truth = label_matrix(&truth)?;
    let scores = match scores {
        Some(s) => score_matrix(&s)?,
        None if spec.measure.is_ranking() => {
            return Err(PyValueError::new_err(format!("{measure} needs scores")));
        }
        None => truth.map(f64::from),
    };
    let pred = match pred {
        Some(p) => label_matrix(&p)?,
        None => threshold_scores(&scores, 0.5),
    };
    metrics::evaluate(spec, &truth, &pred, &scores).map_err(to_py)
}

#[pyfunction]
fn percent_improvement(p0: f64, p1: f64) -> PyResult<f64> {
    metrics::percent_improvement(p0, p1).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (u, v, kind="euclidean"))]
fn pair_similarity(u: Vec<f64>, v: Vec<f64>, kind: &str) -> PyResult<f64> {
    let kind: SimilarityKind = parse(kind)?;
    similarity::pair_similarity(&u, &v, kind).map_err(to_py)
}

/// Class similarity of `class` in `data`; `None` with fewer than two members.
#[pyfunction]
#[pyo3(signature = (data, class_index, kind="euclidean", calc="safe_interval"))]
fn class_similarity(
    data: &PyLabeledSet,
    class_index: usize,
    kind: &str,
    calc: &str,
) -> PyResult<Option<f64>> {
    let kind: SimilarityKind = parse(kind)?;
    let calc: SimilarityCalcType = parse(calc)?;
    similarity::class_similarity(&data.inner, class_index, kind, calc).map_err(to_py)
}

#[pyfunction]
fn initial_factor(s: f64) -> PyResult<f64> {
    similarity::initial_factor(s).map_err(to_py)
}

#[pyfunction]
fn update_factor(f: f64, accepted: bool, s: f64) -> f64 {
    similarity::update_factor(f, accepted, s)
}

#[pyfunction]
fn kfold(n: usize, k: usize, seed: u64) -> PyResult<Vec<(Vec<usize>, Vec<usize>)>> {
    Ok(kfold_split(n, k, seed)
        .map_err(to_py)?
        .into_iter()
        .map(|f| (f.train, f.test))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (num_instances=3400, dimension=16, num_classes=12, max_imbalance=38.0, seed=0))]
fn synthetic(
    num_instances: usize,
    dimension: usize,
    num_classes: usize,
    max_imbalance: f64,
    seed: u64,
) -> PyResult<PyLabeledSet> {
    let spec = SyntheticSpec {
        num_instances,
        dimension,
        num_classes,
        max_imbalance,
        seed,
        ..Default::default()
    };
    gaussian_clusters(&spec)
        .map(|inner| PyLabeledSet { inner })
        .map_err(to_py)
}

/// Runs the oversampler. Keyword arguments override the default
/// configuration; returns `(new_labeled_set, remaining_pool, report)` where
/// `report` holds the summary, history and added instances.
#[pyfunction]
#[pyo3(signature = (labeled, pool, seed, eval_set=None, **options))]
fn oversample<'py>(
    py: Python<'py>,
    labeled: &PyLabeledSet,
    pool: &PyPool,
    seed: u64,
    eval_set: Option<&PyLabeledSet>,
    options: Option<&Bound<'py, PyDict>>,
) -> PyResult<(PyLabeledSet, PyPool, Bound<'py, PyAny>)> {
    let mut config = OversampleConfig::default();
    if let Some(opts) = options {
        let text: String = py
            .import("json")?
            .call_method1("dumps", (opts,))?
            .extract()?;
        config = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    }
    config.seed = seed;
    if eval_set.is_some() && options.is_none_or(|o| !o.contains("eval_policy").unwrap_or(false)) {
        config.eval_policy = EvalPolicy::ExternalTest;
    }
    let eval = eval_set.map(|e| e.inner.clone());
    let (l, p) = (labeled.inner.clone(), pool.inner.clone());
    let outcome = py
        .detach(|| labelmine::oversample(&l, &p, &config, eval.as_ref()))
        .map_err(to_py)?;
    let report = serde_json::json!({
        "summary": outcome.summary(),
        "history": outcome.history,
        "added": outcome.added,
        "warnings": outcome.warnings,
    });
    let report = to_json(py, &report)?;
    Ok((
        PyLabeledSet {
            inner: outcome.labeled,
        },
        PyPool {
            inner: outcome.pool,
        },
        report,
    ))
}

#[pymodule]
#[pyo3(name = "labelmine")]
fn labelmine_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLabeledSet>()?;
    m.add_class::<PyPool>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(percent_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(pair_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(class_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(initial_factor, m)?)?;
    m.add_function(wrap_pyfunction!(update_factor, m)?)?;
    m.add_function(wrap_pyfunction!(kfold, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(oversample, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
