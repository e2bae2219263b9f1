//! Instances, datasets, the line-delimited instance file format, and the
//! seeded splitting routines (labeled/unlabeled and k-fold).
//!
//! File layout: the first line is a header object
//! `{"dimension": D, "num_classes": L, "class_names": [...]}` and every
//! following line is one instance record
//! `{"id": "...", "vector": [D reals], "labels": [L 0/1 values] | null}`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Deref;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::LabelMatrix;

/// Derives an independent RNG stream from a user seed.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dimension: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl Header {
    pub fn new(dimension: usize, class_names: Vec<String>) -> Self {
        Self {
            dimension,
            num_classes: class_names.len(),
            class_names,
        }
    }

    /// Header with generated class names `c0..c{L-1}`.
    pub fn anonymous(dimension: usize, num_classes: usize) -> Self {
        Self::new(
            dimension,
            (0..num_classes).map(|i| format!("c{i}")).collect(),
        )
    }

    fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidArgument(
                "num_classes must be positive".into(),
            ));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "header declares {} classes but names {}",
                self.num_classes,
                self.class_names.len()
            )));
        }
        Ok(())
    }
}

/// One data point: an embedding vector with an optional binary label vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub vector: Vec<f64>,
    pub labels: Option<Vec<u8>>,
}

impl Instance {
    pub fn labeled(id: impl Into<String>, vector: Vec<f64>, labels: Vec<u8>) -> Self {
        Self {
            id: id.into(),
            vector,
            labels: Some(labels),
        }
    }

    pub fn unlabeled(id: impl Into<String>, vector: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            vector,
            labels: None,
        }
    }

    pub fn has_label(&self, class: usize) -> bool {
        self.labels.as_ref().is_some_and(|l| l[class] == 1)
    }

    fn validate(&self, header: &Header) -> Result<()> {
        if self.vector.len() != header.dimension {
            return Err(Error::DimensionMismatch {
                id: self.id.clone(),
                expected: header.dimension,
                found: self.vector.len(),
            });
        }
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "record `{}` has a non-finite coordinate",
                self.id
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != header.num_classes {
                return Err(Error::InvalidLabels {
                    id: self.id.clone(),
                    message: format!(
                        "{} label entries, expected {}",
                        labels.len(),
                        header.num_classes
                    ),
                });
            }
            if labels.iter().any(|&b| b > 1) {
                return Err(Error::InvalidLabels {
                    id: self.id.clone(),
                    message: "label entries must be 0 or 1".into(),
                });
            }
            if !labels.contains(&1) {
                return Err(Error::InvalidLabels {
                    id: self.id.clone(),
                    message: "labeled instance needs at least one positive label".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Labeled,
    Unlabeled,
}

/// A header plus an ordered collection of instances sharing its dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    header: Header,
    instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(header: Header, instances: Vec<Instance>) -> Result<Self> {
        header.validate()?;
        let mut seen = HashSet::with_capacity(instances.len());
        for inst in &instances {
            inst.validate(&header)?;
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::DuplicateId(inst.id.clone()));
            }
        }
        Ok(Self { header, instances })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn dimension(&self) -> usize {
        self.header.dimension
    }

    pub fn num_classes(&self) -> usize {
        self.header.num_classes
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<Instance> {
        self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.instances.iter().map(|i| i.id.as_str())
    }

    /// New dataset holding the instances at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            header: self.header.clone(),
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
        }
    }

    pub fn is_compatible(&self, other: &Dataset) -> bool {
        self.header.dimension == other.header.dimension
            && self.header.num_classes == other.header.num_classes
    }

    pub fn read(path: impl AsRef<Path>, role: Role) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), role).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn from_reader(reader: impl BufRead, role: Role) -> Result<Self> {
        let mut header: Option<Header> = None;
        let mut instances = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::io("<reader>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let Some(h) = &header else {
                let h: Header =
                    serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                        line: line_no,
                        message: format!("bad header: {e}"),
                    })?;
                h.validate().map_err(|e| Error::MalformedRecord {
                    line: line_no,
                    message: e.to_string(),
                })?;
                header = Some(h);
                continue;
            };
            let inst: Instance =
                serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                    line: line_no,
                    message: e.to_string(),
                })?;
            match (role, inst.labels.is_some()) {
                (Role::Labeled, false) => {
                    return Err(Error::MissingLabels {
                        id: inst.id,
                        line: line_no,
                    })
                }
                (Role::Unlabeled, true) => {
                    return Err(Error::UnexpectedLabels {
                        id: inst.id,
                        line: line_no,
                    })
                }
                _ => {}
            }
            inst.validate(h)?;
            if !seen.insert(inst.id.clone()) {
                return Err(Error::DuplicateId(inst.id));
            }
            instances.push(inst);
        }
        let header = header.ok_or(Error::EmptyDataset)?;
        if instances.is_empty() && role == Role::Labeled {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { header, instances })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let io = |e| Error::io("<writer>", e);
        serde_json::to_writer(&mut *w, &self.header)?;
        w.write_all(b"\n").map_err(io)?;
        for inst in &self.instances {
            serde_json::to_writer(&mut *w, inst)?;
            w.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }
}

/// A dataset in which every instance carries a label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet(Dataset);

/// A dataset in which no instance carries labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool(Dataset);

impl LabeledSet {
    pub fn new(dataset: Dataset) -> Result<Self> {
        if let Some(inst) = dataset.instances.iter().find(|i| i.labels.is_none()) {
            return Err(Error::MissingLabels {
                id: inst.id.clone(),
                line: 0,
            });
        }
        Ok(Self(dataset))
    }

    pub fn from_instances(header: Header, instances: Vec<Instance>) -> Result<Self> {
        Self::new(Dataset::new(header, instances)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self(Dataset::read(path, Role::Labeled)?))
    }

    pub fn dataset(&self) -> &Dataset {
        &self.0
    }

    pub fn into_dataset(self) -> Dataset {
        self.0
    }

    pub fn labels(&self, i: usize) -> &[u8] {
        self.0.instances[i]
            .labels
            .as_deref()
            .expect("labeled set invariant")
    }

    pub fn label_matrix(&self) -> LabelMatrix {
        let rows: Vec<&[u8]> = (0..self.len()).map(|i| self.labels(i)).collect();
        LabelMatrix::from_rows(&rows).expect("uniform label width")
    }

    /// Positive count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for i in 0..self.len() {
            for (c, &b) in self.labels(i).iter().enumerate() {
                counts[c] += b as usize;
            }
        }
        counts
    }

    /// Indices of instances positive for `class`.
    pub fn members(&self, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels(i)[class] == 1)
            .collect()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet(self.0.select(indices))
    }

    pub fn push(&mut self, inst: Instance) -> Result<()> {
        if inst.labels.is_none() {
            return Err(Error::MissingLabels {
                id: inst.id,
                line: 0,
            });
        }
        inst.validate(&self.0.header)?;
        if self.0.instances.iter().any(|i| i.id == inst.id) {
            return Err(Error::DuplicateId(inst.id));
        }
        self.0.instances.push(inst);
        Ok(())
    }

    /// Drops the labels, producing a pool with the same instances.
    pub fn strip_labels(&self) -> UnlabeledPool {
        let instances = self
            .0
            .instances
            .iter()
            .map(|i| Instance::unlabeled(i.id.clone(), i.vector.clone()))
            .collect();
        UnlabeledPool(Dataset {
            header: self.0.header.clone(),
            instances,
        })
    }
}

impl UnlabeledPool {
    pub fn new(dataset: Dataset) -> Result<Self> {
        if let Some(inst) = dataset.instances.iter().find(|i| i.labels.is_some()) {
            return Err(Error::UnexpectedLabels {
                id: inst.id.clone(),
                line: 0,
            });
        }
        Ok(Self(dataset))
    }

    pub fn from_instances(header: Header, instances: Vec<Instance>) -> Result<Self> {
        Self::new(Dataset::new(header, instances)?)
    }

    pub fn empty(header: Header) -> Self {
        Self(Dataset {
            header,
            instances: Vec::new(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self(Dataset::read(path, Role::Unlabeled)?))
    }

    pub fn dataset(&self) -> &Dataset {
        &self.0
    }

    pub fn into_dataset(self) -> Dataset {
        self.0
    }

    /// Removes the instances at `indices` and returns them.
    pub(crate) fn take(&mut self, indices: &[usize]) -> Vec<Instance> {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut taken: BTreeMap<usize, Instance> = BTreeMap::new();
        for &i in sorted.iter().rev() {
            taken.insert(i, self.0.instances.remove(i));
        }
        indices.iter().filter_map(|i| taken.remove(i)).collect()
    }
}

impl Deref for LabeledSet {
    type Target = Dataset;
    fn deref(&self) -> &Dataset {
        &self.0
    }
}

impl Deref for UnlabeledPool {
    type Target = Dataset;
    fn deref(&self) -> &Dataset {
        &self.0
    }
}

/// Table-style summary of a labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_labels: usize,
    pub num_instances: usize,
    pub cardinality: f64,
    pub density: f64,
    /// Largest class count over smallest nonzero class count.
    pub max_imbalance_ratio: f64,
    pub class_counts: Vec<usize>,
    pub empty_classes: usize,
}

pub fn dataset_stats(d: &LabeledSet) -> Result<DatasetStats> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let counts = d.class_counts();
    let total: usize = counts.iter().sum();
    let n = d.len();
    let l = d.num_classes();
    let cardinality = total as f64 / n as f64;
    let max = counts.iter().copied().max().unwrap_or(0);
    let min_nonzero = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(1);
    Ok(DatasetStats {
        num_labels: l,
        num_instances: n,
        cardinality,
        density: cardinality / l as f64,
        max_imbalance_ratio: max as f64 / min_nonzero as f64,
        empty_classes: counts.iter().filter(|&&c| c == 0).count(),
        class_counts: counts,
    })
}

/// Result of splitting a labeled set into a labeled part and an unlabeled
/// pool. The pool's true labels live only in `hidden_labels`.
#[derive(Debug, Clone)]
pub struct LabeledSplit {
    pub labeled: LabeledSet,
    pub pool: UnlabeledPool,
    pub hidden_labels: BTreeMap<String, Vec<u8>>,
    pub warnings: Vec<String>,
}

/// Number of instances a fraction selects out of `n`, rounded half away
/// from zero.
pub fn fraction_count(n: usize, fraction: f64) -> usize {
    (fraction * n as f64).round() as usize
}

/// Seeded stratified selection of `round(fraction * n)` instances.
///
/// Classes are visited in descending frequency order (ties resolved by a
/// seeded shuffle). Within a class, unassigned members are taken in seeded
/// order until the class reaches `round(fraction * count)` selected
/// positives; the rest of its unassigned members are left out. A final pass
/// tops the selection up to the exact target.
pub(crate) fn stratified_selection(
    labels: &[&[u8]],
    num_classes: usize,
    fraction: f64,
    seed: u64,
    stream: u64,
) -> Result<Vec<bool>> {
    let n = labels.len();
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} must lie in (0, 1)"
        )));
    }
    let target = fraction_count(n, fraction);
    if target == 0 || target == n {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {n} instances leaves one side empty"
        )));
    }
    let mut rng = rng_for(seed, stream);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut counts = vec![0usize; num_classes];
    for row in labels {
        for (c, &b) in row.iter().enumerate() {
            counts[c] += b as usize;
        }
    }
    let mut classes: Vec<usize> = (0..num_classes).collect();
    classes.shuffle(&mut rng);
    classes.sort_by(|a, b| counts[*b].cmp(&counts[*a]));

    let mut assigned: Vec<Option<bool>> = vec![None; n];
    let mut selected_per_class = vec![0usize; num_classes];
    let mut selected = 0usize;
    for &c in &classes {
        let desired = fraction_count(counts[c], fraction);
        for &i in &order {
            if assigned[i].is_some() || labels[i][c] == 0 {
                continue;
            }
            let take = selected_per_class[c] < desired && selected < target;
            assigned[i] = Some(take);
            if take {
                selected += 1;
                for (k, &b) in labels[i].iter().enumerate() {
                    selected_per_class[k] += b as usize;
                }
            }
        }
    }
    let mut out: Vec<bool> = assigned.iter().map(|a| a.unwrap_or(false)).collect();
    for &i in &order {
        if selected >= target {
            break;
        }
        if !out[i] {
            out[i] = true;
            selected += 1;
        }
    }
    Ok(out)
}

/// Stratified, seeded split into a labeled part (`labeled_fraction` of the
/// input) and an unlabeled pool with its true labels held aside.
pub fn split_labeled_unlabeled(
    d: &LabeledSet,
    labeled_fraction: f64,
    seed: u64,
) -> Result<LabeledSplit> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rows: Vec<&[u8]> = (0..d.len()).map(|i| d.labels(i)).collect();
    let selection = stratified_selection(&rows, d.num_classes(), labeled_fraction, seed, 1)?;
    let labeled_idx: Vec<usize> = (0..d.len()).filter(|&i| selection[i]).collect();
    let pool_idx: Vec<usize> = (0..d.len()).filter(|&i| !selection[i]).collect();

    let labeled = d.select(&labeled_idx);
    let pool_part = d.select(&pool_idx);
    let hidden_labels = pool_part
        .instances()
        .iter()
        .map(|i| (i.id.clone(), i.labels.clone().expect("labeled input")))
        .collect();
    let warnings = labeled
        .class_counts()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(c, _)| {
            format!(
                "class {c} ({}) has no positives on the labeled side",
                d.header().class_names[c]
            )
        })
        .collect::<Vec<_>>();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(LabeledSplit {
        pool: pool_part.strip_labels(),
        labeled,
        hidden_labels,
        warnings,
    })
}

/// Stratified, seeded holdout: returns `(held_out, rest)` with
/// `round(fraction * n)` instances held out.
pub fn holdout_split(d: &LabeledSet, fraction: f64, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rows: Vec<&[u8]> = (0..d.len()).map(|i| d.labels(i)).collect();
    let selection = stratified_selection(&rows, d.num_classes(), fraction, seed, 5)?;
    let held: Vec<usize> = (0..d.len()).filter(|&i| selection[i]).collect();
    let rest: Vec<usize> = (0..d.len()).filter(|&i| !selection[i]).collect();
    Ok((d.select(&held), d.select(&rest)))
}

/// One cross-validation fold, as index lists into the source dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded k-fold partition of `0..n`. Test folds are disjoint, cover every
/// index, and differ in size by at most one (the first `n % k` folds are
/// the larger ones). Index lists are sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}, need k >= 2")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {n} available instances"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, 2));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test = order[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}
