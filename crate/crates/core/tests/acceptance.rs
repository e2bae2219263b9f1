//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criterion 8 needs real sentence-embedding exports of the legal-policy
//! corpus. Point `OPP115_EMBEDDINGS` at a labeled instance file to run it;
//! without it the line reads BLOCKED.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use labelmine::classifier::{threshold_scores, BinaryProblem, Classifier, OvrLogistic};
use labelmine::experiment::{grid_search, ParameterGrid};
use labelmine::metrics::{self, percent_improvement, prf1, Averaging, Measure};
use labelmine::oversample::{performance_factor, required_instances, selection_probabilities};
use labelmine::similarity::{
    class_similarity, initial_factor, instance_class_similarity, pair_similarity,
    raw_update_factor, update_factor, ClassSimilarityProfile, SIMILARITY_FLOOR,
};
use labelmine::{
    gaussian_clusters, oversample, split_labeled_unlabeled, EvalPolicy, ExperimentPlan, Header,
    Instance, LabelMatrix, LabeledSet, MeasureSpec, Orientation, OversampleConfig, ScoreMatrix,
    SimilarityCalcType, SimilarityKind, SyntheticSpec, TrainingParams,
};

type Check = Result<String, String>;

fn ensure(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, format!("{what}: {a} vs {b}"))
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn formulas() -> Check {
    let eps = SIMILARITY_FLOOR;
    let tol = 1e-12;
    let mut n = 0;
    let mut check = |r: Result<(), String>| {
        n += 1;
        r
    };

    // F1 as harmonic mean
    check(close(
        metrics::harmonic_f1(0.5, 1.0),
        2.0 / 3.0,
        tol,
        "F1(0.5, 1)",
    ))?;

    // class similarity, both reductions
    let h = Header::anonymous(2, 1);
    let members = LabeledSet::from_instances(
        h,
        vec![
            Instance::labeled("m0", vec![1.0, 0.0], vec![1]),
            Instance::labeled("m1", vec![1.0, 0.0], vec![1]),
            Instance::labeled("m2", vec![0.0, 1.0], vec![1]),
        ],
    )
    .map_err(err)?;
    let avg = class_similarity(
        &members,
        0,
        SimilarityKind::Cosine,
        SimilarityCalcType::Average,
    )
    .map_err(err)?
    .ok_or("mean undefined")?;
    check(close(
        avg,
        (1.0 + 2.0 * eps) / 3.0,
        tol,
        "mean class similarity",
    ))?;
    let q3 = class_similarity(
        &members,
        0,
        SimilarityKind::Cosine,
        SimilarityCalcType::SafeInterval,
    )
    .map_err(err)?
    .ok_or("Q3 undefined")?;
    check(close(q3, 0.5 + eps / 2.0, tol, "Q3 class similarity"))?;

    // pair similarities
    check(close(
        pair_similarity(&[1.0, 0.0], &[0.0, 1.0], SimilarityKind::Cosine).map_err(err)?,
        eps,
        tol,
        "orthogonal cosine",
    ))?;
    check(close(
        pair_similarity(&[0.0, 0.0], &[3.0, 4.0], SimilarityKind::Euclidean).map_err(err)?,
        1.0 / 6.0,
        tol,
        "euclidean (0,0)-(3,4)",
    ))?;
    for kind in SimilarityKind::ALL {
        check(close(
            pair_similarity(&[0.3, 2.0], &[0.3, 2.0], kind).map_err(err)?,
            1.0,
            tol,
            "identity",
        ))?;
    }
    let two = LabeledSet::from_instances(
        Header::anonymous(2, 1),
        vec![
            Instance::labeled("p", vec![1.0, 0.0], vec![1]),
            Instance::labeled("q", vec![0.0, 1.0], vec![1]),
        ],
    )
    .map_err(err)?;
    check(close(
        instance_class_similarity(&[1.0, 0.0], &two, 0, SimilarityKind::Cosine).map_err(err)?,
        (1.0 + eps) / 2.0,
        tol,
        "instance-to-class mean",
    ))?;

    // factor initialization and updates
    for (s, f) in [(1.0, 1.0), (0.25, 2.0), (0.64, 1.25)] {
        check(close(
            initial_factor(s).map_err(err)?,
            f,
            tol,
            "initial factor",
        ))?;
    }
    check(close(
        raw_update_factor(1.25, true),
        1.2548828125,
        tol,
        "accepted update",
    ))?;
    check(close(
        raw_update_factor(1.25, false),
        1.2451171875,
        tol,
        "rejected update",
    ))?;
    check(close(
        update_factor(1.0, true, 0.5),
        1.0,
        tol,
        "fixed point",
    ))?;

    // performance factor and required instances
    check(close(
        performance_factor(1.0, Orientation::Maximize).map_err(err)?,
        0.0,
        tol,
        "rho(F1 = 1)",
    ))?;
    check(close(
        performance_factor(0.6, Orientation::Maximize).map_err(err)?,
        0.4,
        tol,
        "rho(F1 = 0.6)",
    ))?;
    check(close(
        performance_factor(0.3, Orientation::Minimize).map_err(err)?,
        0.3,
        tol,
        "rho(hamming 0.3)",
    ))?;
    check(close(
        required_instances(135, 0.2, 10, 1.0),
        34.0,
        tol,
        "need, rho 1",
    ))?;
    check(close(
        required_instances(135, 0.2, 10, 0.4),
        13.6,
        tol,
        "need, rho 0.4",
    ))?;
    check(close(
        required_instances(135, 0.2, 50, 1.0),
        0.0,
        tol,
        "need clipped",
    ))?;

    // selection probabilities
    let p = selection_probabilities(&[30.0, 10.0, 0.0]).ok_or("no probabilities")?;
    check(ensure(
        p.probabilities == vec![0.75, 0.25, 0.0],
        format!("probabilities {:?}", p.probabilities),
    ))?;
    check(ensure(
        selection_probabilities(&[0.0, 0.0]).is_none(),
        "all-zero needs",
    ))?;

    // relative improvement
    check(close(
        percent_improvement(0.5, 0.6).map_err(err)?,
        0.2,
        tol,
        "0.5 -> 0.6",
    ))?;
    check(close(
        percent_improvement(0.7, 0.7).map_err(err)?,
        0.0,
        tol,
        "no change",
    ))?;
    check(close(
        percent_improvement(0.5961, 0.6280).map_err(err)?,
        0.0535,
        5e-4,
        "published improvement",
    ))?;
    check(ensure(
        percent_improvement(0.0, 0.3).is_err(),
        "p0 = 0 must be undefined",
    ))?;

    let published = percent_improvement(0.5961, 0.6280).map_err(err)?;
    Ok(format!(
        "{n} formula cases exact; (0.5961, 0.6280) -> {published:.5}"
    ))
}

// ---------------------------------------------------------------- 2

fn synthetic_oracle() -> Check {
    let data = gaussian_clusters(&SyntheticSpec {
        num_instances: 3400,
        dimension: 16,
        num_classes: 12,
        max_imbalance: 38.0,
        seed: 2024,
        ..Default::default()
    })
    .map_err(err)?;
    let stats = labelmine::dataset_stats(&data).map_err(err)?;
    let config = OversampleConfig::default();
    let plan = ExperimentPlan {
        labeled_fraction: 0.05,
        folds: 5,
        grid: ParameterGrid::single(&config),
        eval_policy: EvalPolicy::ExternalTest,
        seed: 7,
        ..Default::default()
    };
    let result = grid_search(&data, &plan).map_err(err)?;
    let mut improvements = Vec::new();
    let mut slowest: f64 = 0.0;
    let mut added = 0;
    for run in &result.runs {
        let r = run
            .result
            .as_ref()
            .ok_or_else(|| format!("fold {} failed: {:?}", run.fold, run.error))?;
        ensure(
            r.final_measure >= r.initial_measure,
            format!(
                "fold {}: {} < {}",
                r.fold, r.final_measure, r.initial_measure
            ),
        )?;
        slowest = slowest.max(r.oversample_seconds);
        improvements.push(r.improvement);
        added += r.instances_added;
    }
    let mean = improvements.iter().sum::<f64>() / improvements.len() as f64;
    let summary = format!(
        "cardinality {:.3}, MIR {:.1}; per-fold improvement {:?}; mean {:.4}; {added} added; slowest fold {:.2}s",
        stats.cardinality,
        stats.max_imbalance_ratio,
        improvements
            .iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>(),
        mean,
        slowest
    );
    ensure(
        mean > 0.0,
        format!("mean improvement not positive: {summary}"),
    )?;
    ensure(slowest < 60.0, format!("fold too slow: {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 3

fn monotone_runs() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = Vec::new();
    let mut accepted_total = 0;
    for run in 0..50 {
        let spec = SyntheticSpec {
            num_instances: rng.random_range(60..160),
            dimension: rng.random_range(2..9),
            num_classes: rng.random_range(2..6),
            max_imbalance: rng.random_range(1.0..10.0),
            seed: run,
            ..Default::default()
        };
        let data = gaussian_clusters(&spec).map_err(err)?;
        let split =
            split_labeled_unlabeled(&data, rng.random_range(0.15..0.4), run).map_err(err)?;
        let measures = [
            "f1.weighted",
            "f1.micro",
            "hamming_loss",
            "accuracy",
            "coverage",
        ];
        let measure: MeasureSpec = measures[rng.random_range(0..measures.len())]
            .parse()
            .map_err(err)?;
        let config = OversampleConfig {
            balance_ratio: [0.2, 0.3, 0.4, 0.5][rng.random_range(0..4)],
            similarity_calc_type: SimilarityCalcType::ALL[rng.random_range(0..2)],
            batch_size: [1, 2, 3, 5, 7][rng.random_range(0..5)],
            num_iterations: rng.random_range(1..25),
            similarity_kind: SimilarityKind::ALL[rng.random_range(0..3)],
            measure,
            seed: run,
            training: TrainingParams {
                epochs: 60,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = match oversample(&split.labeled, &split.pool, &config, None) {
            Ok(o) => o,
            Err(e) => {
                violations.push(format!("run {run}: {e}"));
                continue;
            }
        };
        let start = split.labeled.len() + split.pool.len();
        let mut best = out.history[0].measure_value;
        let mut rejected = 0;
        let mut prev_labeled = out.history[0].labeled_size;
        for r in &out.history[1..] {
            if r.accepted {
                accepted_total += 1;
                if !measure.improves(r.measure_value, best) {
                    violations.push(format!("run {run} it {}: not an improvement", r.iteration));
                }
                best = r.measure_value;
            } else {
                rejected += r.candidate_count;
            }
            if r.labeled_size + r.unlabeled_size + rejected != start
                || r.labeled_size < prev_labeled
            {
                violations.push(format!("run {run} it {}: bookkeeping", r.iteration));
            }
            prev_labeled = r.labeled_size;
        }
        if out.labeled.len() != split.labeled.len() + out.added.len()
            || out.pool.len() + out.added.len() + out.rejected_count != split.pool.len()
        {
            violations.push(format!("run {run}: final counts"));
        }
    }
    ensure(
        violations.is_empty(),
        format!("{} violations: {:?}", violations.len(), violations),
    )?;
    Ok(format!(
        "50 runs, 0 violations ({accepted_total} accepted batches)"
    ))
}

// ---------------------------------------------------------------- 4

/// Independent reference implementations.
mod oracle {
    pub fn subset_accuracy(t: &[Vec<u8>], p: &[Vec<u8>]) -> f64 {
        t.iter().zip(p).filter(|(a, b)| a == b).count() as f64 / t.len() as f64
    }

    pub fn hamming(t: &[Vec<u8>], p: &[Vec<u8>]) -> f64 {
        let mut wrong = 0;
        let mut cells = 0;
        for (a, b) in t.iter().zip(p) {
            for j in 0..a.len() {
                cells += 1;
                if a[j] != b[j] {
                    wrong += 1;
                }
            }
        }
        wrong as f64 / cells as f64
    }

    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    fn f1(p: f64, r: f64) -> f64 {
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// (precision, recall, f1) under "micro" | "macro" | "weighted" | "samples".
    pub fn prf(t: &[Vec<u8>], p: &[Vec<u8>], how: &str) -> [f64; 3] {
        let l = t[0].len();
        let confusion = |rows: &mut dyn Iterator<Item = (u8, u8)>| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (a, b) in rows {
                tp += usize::from(a == 1 && b == 1);
                fp += usize::from(a == 0 && b == 1);
                fn_ += usize::from(a == 1 && b == 0);
            }
            (tp, fp, fn_)
        };
        let score = |(tp, fp, fn_): (usize, usize, usize)| {
            let pr = ratio(tp, tp + fp);
            let re = ratio(tp, tp + fn_);
            [pr, re, f1(pr, re)]
        };
        match how {
            "micro" => score(confusion(
                &mut t
                    .iter()
                    .zip(p)
                    .flat_map(|(a, b)| a.iter().copied().zip(b.iter().copied())),
            )),
            "samples" => {
                let mut acc = [0.0; 3];
                for (a, b) in t.iter().zip(p) {
                    let s = score(confusion(&mut a.iter().copied().zip(b.iter().copied())));
                    for k in 0..3 {
                        acc[k] += s[k];
                    }
                }
                acc.map(|x| x / t.len() as f64)
            }
            _ => {
                let mut acc = [0.0; 3];
                let mut total = 0.0;
                for j in 0..l {
                    let c = confusion(&mut t.iter().zip(p).map(|(a, b)| (a[j], b[j])));
                    let w = if how == "macro" {
                        1.0
                    } else {
                        t.iter().filter(|a| a[j] == 1).count() as f64
                    };
                    let s = score(c);
                    for k in 0..3 {
                        acc[k] += w * s[k];
                    }
                    total += w;
                }
                if total == 0.0 {
                    [0.0; 3]
                } else {
                    acc.map(|x| x / total)
                }
            }
        }
    }

    /// Descending order of label indices, ties in index order, and the
    /// worst 1-based rank of each label.
    fn ranks(s: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
        let mut rank = vec![0; s.len()];
        let mut i = 0;
        while i < order.len() {
            let mut end = i;
            while end + 1 < order.len() && s[order[end + 1]] == s[order[i]] {
                end += 1;
            }
            for &j in &order[i..=end] {
                rank[j] = end + 1;
            }
            i = end + 1;
        }
        rank
    }

    fn any_row_without(t: &[Vec<u8>], bit: u8) -> bool {
        t.iter().any(|r| !r.contains(&bit))
    }

    pub fn one_error(t: &[Vec<u8>], s: &[Vec<f64>]) -> Option<f64> {
        if any_row_without(t, 1) {
            return None;
        }
        let mut miss = 0;
        for (a, sc) in t.iter().zip(s) {
            let max = sc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let top = sc.iter().position(|&v| v == max).unwrap();
            miss += usize::from(a[top] == 0);
        }
        Some(miss as f64 / t.len() as f64)
    }

    pub fn coverage(t: &[Vec<u8>], s: &[Vec<f64>]) -> Option<f64> {
        if any_row_without(t, 1) {
            return None;
        }
        let total: usize = t
            .iter()
            .zip(s)
            .map(|(a, sc)| {
                let r = ranks(sc);
                (0..a.len())
                    .filter(|&j| a[j] == 1)
                    .map(|j| r[j])
                    .max()
                    .unwrap()
            })
            .sum();
        Some(total as f64 / t.len() as f64)
    }

    pub fn ranking_loss(t: &[Vec<u8>], s: &[Vec<f64>]) -> Option<f64> {
        if any_row_without(t, 1) || any_row_without(t, 0) {
            return None;
        }
        let mut total = 0.0;
        for (a, sc) in t.iter().zip(s) {
            let mut bad = 0.0;
            let mut pairs = 0.0;
            for i in 0..a.len() {
                for j in 0..a.len() {
                    if a[i] == 1 && a[j] == 0 {
                        pairs += 1.0;
                        bad += if sc[i] < sc[j] {
                            1.0
                        } else if sc[i] == sc[j] {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
            }
            total += bad / pairs;
        }
        Some(total / t.len() as f64)
    }

    pub fn average_precision(t: &[Vec<u8>], s: &[Vec<f64>]) -> Option<f64> {
        if any_row_without(t, 1) || any_row_without(t, 0) {
            return None;
        }
        let mut total = 0.0;
        for (a, sc) in t.iter().zip(s) {
            let r = ranks(sc);
            let rel: Vec<usize> = (0..a.len()).filter(|&j| a[j] == 1).collect();
            let mut row = 0.0;
            for &j in &rel {
                let at_or_above = rel.iter().filter(|&&k| r[k] <= r[j]).count();
                row += at_or_above as f64 / r[j] as f64;
            }
            total += row / rel.len() as f64;
        }
        Some(total / t.len() as f64)
    }
}

fn compare_case(t: &[Vec<u8>], p: &[Vec<u8>], s: &[Vec<f64>]) -> Result<usize, String> {
    let tol = 1e-9;
    let n = t.len();
    let l = t[0].len();
    let tm = LabelMatrix::from_vec(n, l, t.concat()).map_err(err)?;
    let pm = LabelMatrix::from_vec(n, l, p.concat()).map_err(err)?;
    let sm = ScoreMatrix::from_vec(n, l, s.concat()).map_err(err)?;
    let mut compared = 0;
    let mut cmp = |name: &str, got: Option<f64>, want: Option<f64>| -> Result<(), String> {
        compared += 1;
        match (got, want) {
            (Some(g), Some(w)) if (g - w).abs() <= tol => Ok(()),
            (None, None) => Ok(()),
            other => Err(format!("{name} on t={t:?} p={p:?} s={s:?}: {other:?}")),
        }
    };
    cmp(
        "subset_accuracy",
        metrics::subset_accuracy(&tm, &pm).ok(),
        Some(oracle::subset_accuracy(t, p)),
    )?;
    cmp(
        "hamming_loss",
        metrics::hamming_loss(&tm, &pm).ok(),
        Some(oracle::hamming(t, p)),
    )?;
    cmp(
        "accuracy",
        metrics::label_accuracy(&tm, &pm).ok(),
        Some(1.0 - oracle::hamming(t, p)),
    )?;
    for (how, a) in [
        ("micro", Averaging::Micro),
        ("macro", Averaging::Macro),
        ("weighted", Averaging::Weighted),
        ("samples", Averaging::Samples),
    ] {
        let got = prf1(&tm, &pm, a).map_err(err)?;
        let want = oracle::prf(t, p, how);
        cmp(
            &format!("precision.{how}"),
            Some(got.precision),
            Some(want[0]),
        )?;
        cmp(&format!("recall.{how}"), Some(got.recall), Some(want[1]))?;
        cmp(&format!("f1.{how}"), Some(got.f1), Some(want[2]))?;
    }
    cmp(
        "one_error",
        metrics::one_error(&tm, &sm).ok(),
        oracle::one_error(t, s),
    )?;
    cmp(
        "coverage",
        metrics::coverage(&tm, &sm).ok(),
        oracle::coverage(t, s),
    )?;
    cmp(
        "ranking_loss",
        metrics::ranking_loss(&tm, &sm).ok(),
        oracle::ranking_loss(t, s),
    )?;
    cmp(
        "average_precision",
        metrics::average_precision(&tm, &sm).ok(),
        oracle::average_precision(t, s),
    )?;
    // the generic dispatcher agrees with the direct functions
    for m in Measure::ALL {
        let spec = if m.is_averaged() {
            MeasureSpec::new(m, Some(Averaging::Macro))
        } else {
            MeasureSpec::new(m, None)
        }
        .map_err(err)?;
        let direct = match m {
            Measure::OneError => metrics::one_error(&tm, &sm).ok(),
            Measure::Coverage => metrics::coverage(&tm, &sm).ok(),
            Measure::RankingLoss => metrics::ranking_loss(&tm, &sm).ok(),
            Measure::AveragePrecision => metrics::average_precision(&tm, &sm).ok(),
            Measure::SubsetAccuracy => metrics::subset_accuracy(&tm, &pm).ok(),
            Measure::Accuracy => metrics::label_accuracy(&tm, &pm).ok(),
            Measure::HammingLoss => metrics::hamming_loss(&tm, &pm).ok(),
            _ => prf1(&tm, &pm, Averaging::Macro).ok().and_then(|x| x.get(m)),
        };
        cmp(
            spec.to_string().as_str(),
            metrics::evaluate(spec, &tm, &pm, &sm).ok(),
            direct,
        )?;
    }
    Ok(compared)
}

fn bits(code: usize, n: usize, l: usize) -> Vec<Vec<u8>> {
    (0..n)
        .map(|i| (0..l).map(|j| ((code >> (i * l + j)) & 1) as u8).collect())
        .collect()
}

fn metric_oracles() -> Check {
    let levels = [0.2, 0.5, 0.8];
    let mut comparisons = 0;
    let mut cases = 0;
    for tc in 0..16 {
        for pc in 0..16 {
            let t = bits(tc, 2, 2);
            let p = bits(pc, 2, 2);
            for sc in 0..81usize {
                let s: Vec<Vec<f64>> = (0..2)
                    .map(|i| {
                        (0..2)
                            .map(|j| levels[(sc / 3usize.pow((i * 2 + j) as u32)) % 3])
                            .collect()
                    })
                    .collect();
                comparisons += compare_case(&t, &p, &s)?;
                cases += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let t: Vec<Vec<u8>> = (0..8)
            .map(|_| (0..5).map(|_| u8::from(rng.random_bool(0.35))).collect())
            .collect();
        let p: Vec<Vec<u8>> = (0..8)
            .map(|_| (0..5).map(|_| u8::from(rng.random_bool(0.35))).collect())
            .collect();
        // coarse grid so ties occur
        let s: Vec<Vec<f64>> = (0..8)
            .map(|_| {
                (0..5)
                    .map(|_| rng.random_range(0..11) as f64 / 10.0)
                    .collect()
            })
            .collect();
        comparisons += compare_case(&t, &p, &s)?;
        cases += 1;
    }
    Ok(format!(
        "{cases} cases, {comparisons} comparisons within 1e-9"
    ))
}

// ---------------------------------------------------------------- 5

fn classifier_numerics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let n = rng.random_range(3..25);
        let d = rng.random_range(1..7);
        let features: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut targets: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(rng.random_bool(0.4))))
            .collect();
        targets[0] = 1.0;
        let l2 = rng.random_range(0.0..0.1);
        let problem = BinaryProblem::new(features, d, targets, l2).map_err(err)?;
        let params: Vec<f64> = (0..=d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = problem.gradient(&params);
        let numeric: Vec<f64> = (0..=d)
            .map(|k| {
                let mut up = params.clone();
                let mut down = params.clone();
                up[k] += h;
                down[k] -= h;
                (problem.loss(&up) - problem.loss(&down)) / (2.0 * h)
            })
            .collect();
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        let rel = diff / scale;
        worst = worst.max(rel);
        ensure(
            rel <= 1e-6,
            format!("case {case}: relative gradient error {rel:e}"),
        )?;
    }

    // separable toy: class 0 iff x > 0, class 1 iff y > 0
    let mut instances = Vec::new();
    for (i, &(x, y)) in [
        (2.0, 2.0),
        (1.5, 2.5),
        (2.5, -2.0),
        (1.0, -1.5),
        (-2.0, 2.0),
        (-1.5, 1.0),
        (3.0, 1.0),
        (-1.0, 3.0),
        (2.0, -3.0),
    ]
    .iter()
    .enumerate()
    {
        let labels = vec![u8::from(x > 0.0), u8::from(y > 0.0)];
        instances.push(Instance::labeled(format!("t{i}"), vec![x, y], labels));
    }
    let toy = LabeledSet::from_instances(Header::anonymous(2, 2), instances).map_err(err)?;
    let model = OvrLogistic::train(&toy, &TrainingParams::default()).map_err(err)?;
    let scores = model.score_matrix(&toy).map_err(err)?;
    let pred = threshold_scores(&scores, 0.5);
    let truth = toy.label_matrix();
    for a in Averaging::ALL {
        let f1 = prf1(&truth, &pred, a).map_err(err)?.f1;
        ensure(f1 == 1.0, format!("separable toy F1 ({a:?}) = {f1}"))?;
    }
    Ok(format!(
        "20 gradient checks, worst relative error {worst:.2e}; separable toy F1 = 1.0"
    ))
}

// ---------------------------------------------------------------- 6

fn factor_dynamics() -> Check {
    ensure(
        raw_update_factor(1.0, true) == 1.0,
        "accepted update moves f = 1",
    )?;
    ensure(
        raw_update_factor(1.0, false) == 1.0,
        "rejected update moves f = 1",
    )?;
    let mut checked = 0;
    for k in 1..1000 {
        let f = 1.0 + k as f64 / 1000.0;
        ensure(
            raw_update_factor(f, true) > f,
            format!("accepted update at {f} does not increase"),
        )?;
        ensure(
            raw_update_factor(f, false) < f,
            format!("rejected update at {f} does not decrease"),
        )?;
        checked += 1;
    }
    let mut worst: f64 = 0.0;
    for k in 0..=750 {
        // s >= 0.25 keeps the clamp inactive
        let s = 0.25 + k as f64 / 1000.0;
        let p = ClassSimilarityProfile::new(0, s, false).map_err(err)?;
        let gap = (p.threshold() - s.sqrt()).abs();
        worst = worst.max(gap);
        ensure(gap <= 1e-12, format!("threshold at s = {s}: gap {gap:e}"))?;
    }
    Ok(format!(
        "fixed point holds; direction correct at {checked} points; worst |t - sqrt(s)| = {worst:.1e}"
    ))
}

// ---------------------------------------------------------------- 7

fn desk_runtime() -> Check {
    let data = gaussian_clusters(&SyntheticSpec {
        num_instances: 3400,
        dimension: 1024,
        num_classes: 12,
        max_imbalance: 38.0,
        // same centroid separation relative to noise as in 16 dimensions
        centroid_spread: 0.125,
        seed: 77,
        ..Default::default()
    })
    .map_err(err)?;
    let split = split_labeled_unlabeled(&data, 0.05, 77).map_err(err)?;
    let config = OversampleConfig {
        seed: 77,
        ..Default::default()
    };
    let started = Instant::now();
    let out = oversample(&split.labeled, &split.pool, &config, None).map_err(err)?;
    let seconds = started.elapsed().as_secs_f64();
    let iterations = out.history.len() - 1;
    ensure(
        iterations == 100,
        format!(
            "stopped after {iterations} iterations ({})",
            out.stop_reason
        ),
    )?;
    ensure(seconds < 300.0, format!("{seconds:.1}s for 100 iterations"))?;
    Ok(format!(
        "100 iterations on 3400 x 1024 in {seconds:.1}s ({} labeled, {} pool, {} added)",
        split.labeled.len(),
        split.pool.len(),
        out.added.len()
    ))
}

// ---------------------------------------------------------------- 8

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

fn corpus_reproduction() -> Outcome {
    let Ok(path) = std::env::var("OPP115_EMBEDDINGS") else {
        return Outcome::Blocked(
            "needs OPP-115 embeddings from all-roberta-large-v1; set OPP115_EMBEDDINGS to a labeled instance file"
                .into(),
        );
    };
    let run = || -> Check {
        let data = LabeledSet::read(&path).map_err(err)?;
        let config = OversampleConfig::default();
        let plan = ExperimentPlan {
            labeled_fraction: 0.05,
            folds: 5,
            grid: ParameterGrid::single(&config),
            eval_policy: EvalPolicy::ExternalTest,
            seed: 115,
            ..Default::default()
        };
        let result = grid_search(&data, &plan).map_err(err)?;
        let improvements: Vec<f64> = result
            .runs
            .iter()
            .map(|r| {
                r.result
                    .as_ref()
                    .map(|x| x.improvement)
                    .ok_or_else(|| format!("{:?}", r.error))
            })
            .collect::<Result<_, _>>()?;
        let mean = improvements.iter().sum::<f64>() / improvements.len() as f64;
        let positive = improvements.iter().filter(|&&x| x > 0.0).count();
        let summary = format!("mean improvement {mean:.4}, {positive}/5 folds positive");
        ensure(mean >= 0.0 && positive >= 3, summary.clone())?;
        Ok(summary)
    };
    match run() {
        Ok(s) => Outcome::Pass(s),
        Err(s) => Outcome::Fail(s),
    }
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 7] = [
        ("formula unit suite", formulas),
        ("synthetic oracle experiment", synthetic_oracle),
        ("monotone history and bookkeeping", monotone_runs),
        ("metric oracle equivalence", metric_oracles),
        ("classifier numerics", classifier_numerics),
        ("factor dynamics", factor_dynamics),
        ("desk-scale runtime", desk_runtime),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let started = Instant::now();
        let result = f();
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name} [{secs:.1}s] {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} [{secs:.1}s] {detail}", i + 1);
            }
        }
    }
    match corpus_reproduction() {
        Outcome::Pass(d) => println!("criterion 8: PASS  corpus reproduction {d}"),
        Outcome::Fail(d) => {
            failed += 1;
            println!("criterion 8: FAIL  corpus reproduction {d}");
        }
        Outcome::Blocked(d) => println!("criterion 8: BLOCKED  corpus reproduction: {d}"),
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
