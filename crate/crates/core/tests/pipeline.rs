use std::path::Path;

use labelmine::experiment::{aggregate, best_config, run_fold, ParameterGrid};
use labelmine::metrics::percent_improvement;
use labelmine::oversample::{read_history_csv, HISTORY_FILE};
use labelmine::{
    grid_search, oversample, split_labeled_unlabeled, EvalPolicy, ExperimentPlan, LabeledSet,
    MeasureSpec, OversampleConfig, SimilarityCalcType, SimilarityKind, StopReason, TrainingParams,
    UnlabeledPool,
};

fn small() -> LabeledSet {
    LabeledSet::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small.jsonl"))
        .unwrap()
}

fn quick_config() -> OversampleConfig {
    OversampleConfig {
        num_iterations: 12,
        batch_size: 3,
        similarity_kind: SimilarityKind::Cosine,
        similarity_calc_type: SimilarityCalcType::Average,
        training: TrainingParams {
            epochs: 80,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn empty_pool_or_zero_iterations_keep_input() {
    let d = small();
    let empty = UnlabeledPool::empty(d.header().clone());
    let out = oversample(&d, &empty, &quick_config(), None).unwrap();
    assert_eq!(out.labeled, d);
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.stop_reason, StopReason::PoolExhausted);

    let split = split_labeled_unlabeled(&d, 0.3, 1).unwrap();
    let cfg = OversampleConfig {
        num_iterations: 0,
        ..quick_config()
    };
    let out = oversample(&split.labeled, &split.pool, &cfg, None).unwrap();
    assert_eq!(out.labeled, split.labeled);
    assert_eq!(out.pool, split.pool);
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.initial_measure, out.final_measure);
}

#[test]
fn history_is_reproducible_and_audited() {
    let d = small();
    let split = split_labeled_unlabeled(&d, 0.3, 5).unwrap();
    let cfg = quick_config();
    let a = oversample(&split.labeled, &split.pool, &cfg, None).unwrap();
    let b = oversample(&split.labeled, &split.pool, &cfg, None).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.added, b.added);
    assert_eq!(a.labeled, b.labeled);

    let start = split.labeled.len() + split.pool.len();
    let mut rejected = 0;
    for r in &a.history[1..] {
        if !r.accepted {
            rejected += r.candidate_count;
        }
        assert_eq!(r.labeled_size + r.unlabeled_size + rejected, start);
    }
    let mut best = a.history[0].measure_value;
    for r in a.history.iter().filter(|r| r.accepted) {
        assert!(r.measure_value > best);
        best = r.measure_value;
    }
    for added in &a.added {
        assert_eq!(added.proposal.labels[added.selected_class], 1);
        for (j, &bit) in added.proposal.labels.iter().enumerate() {
            if bit == 1 && j != added.selected_class {
                let s = added.proposal.similarities[j].expect("set bit has a similarity");
                assert!(s >= added.proposal.thresholds[j]);
            }
        }
    }
}

#[test]
fn external_policy_rejects_overlapping_evaluation_set() {
    let d = small();
    let split = split_labeled_unlabeled(&d, 0.3, 5).unwrap();
    let cfg = OversampleConfig {
        eval_policy: EvalPolicy::ExternalTest,
        ..quick_config()
    };
    assert!(oversample(&split.labeled, &split.pool, &cfg, None).is_err());
    assert!(oversample(&split.labeled, &split.pool, &cfg, Some(&split.labeled)).is_err());
}

#[test]
fn outputs_round_trip() {
    let d = small();
    let split = split_labeled_unlabeled(&d, 0.3, 8).unwrap();
    let out = oversample(&split.labeled, &split.pool, &quick_config(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write_outputs(dir.path()).unwrap();
    assert_eq!(
        read_history_csv(dir.path().join(HISTORY_FILE)).unwrap(),
        out.history
    );
    assert_eq!(
        LabeledSet::read(dir.path().join("labeled.jsonl")).unwrap(),
        out.labeled
    );
}

fn plan() -> ExperimentPlan {
    let base = quick_config();
    ExperimentPlan {
        labeled_fraction: 0.25,
        folds: 2,
        grid: ParameterGrid::single(&base),
        measure: MeasureSpec::default(),
        seed: 21,
        eval_policy: EvalPolicy::ExternalTest,
        training: base.training,
        ..Default::default()
    }
}

#[test]
fn run_fold_is_deterministic_and_consistent() {
    let d = small();
    let p = plan();
    let folds = p.fold_partitions(d.len()).unwrap();
    let cfg = &p.configs()[0];
    let a = run_fold(&d, &p, &folds, 0, cfg).unwrap().result;
    let b = run_fold(&d, &p, &folds, 0, cfg).unwrap().result;
    assert_eq!(
        (a.initial_measure, a.final_measure, a.instances_added),
        (b.initial_measure, b.final_measure, b.instances_added)
    );
    let expected = percent_improvement(a.initial_measure, a.final_measure).unwrap();
    assert!((a.improvement - expected).abs() <= 1e-12);
    assert!(a.final_measure >= a.initial_measure);

    let idle = labelmine::OversampleConfig {
        num_iterations: 0,
        ..cfg.clone()
    };
    let r = run_fold(&d, &p, &folds, 1, &idle).unwrap().result;
    assert_eq!(r.improvement, 0.0);
    assert_eq!(r.instances_added, 0);
}

#[test]
fn one_point_grid_two_folds() {
    let d = small();
    let p = plan();
    let result = grid_search(&d, &p).unwrap();
    assert_eq!(result.runs.len(), 2);
    assert_eq!(result.configs.len(), 1);
    let improvements: Vec<f64> = result
        .runs
        .iter()
        .map(|r| r.result.as_ref().unwrap().improvement)
        .collect();
    let mean = improvements.iter().sum::<f64>() / 2.0;
    assert_eq!(result.configs[0].mean_improvement, mean);
    assert_eq!(result.best, Some(0));

    // independent recomputation of the aggregates
    let again = aggregate(&p.configs(), &result.runs, p.folds);
    assert_eq!(again, result.configs);
    assert_eq!(best_config(&again), result.best);

    let parallel = grid_search(&d, &ExperimentPlan { workers: 2, ..p }).unwrap();
    let strip = |r: &labelmine::ExperimentResult| {
        r.runs
            .iter()
            .map(|x| {
                x.result
                    .as_ref()
                    .map(|f| (f.final_measure, f.instances_added))
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&parallel), strip(&result));
}

#[test]
fn failing_runs_mark_config_incomplete() {
    let d = small();
    let mut p = plan();
    p.grid.batch_sizes = vec![0, 3];
    let result = grid_search(&d, &p).unwrap();
    assert_eq!(result.runs.len(), 4);
    assert!(!result.configs[0].complete);
    assert!(result
        .runs
        .iter()
        .filter(|r| r.config_index == 0)
        .all(|r| r.error.is_some()));
    assert!(result.configs[1].complete);
    assert_eq!(result.best, Some(1));
}

mod gate {
    use labelmine::oversample::{improvement_step, Evaluator};
    use labelmine::{
        Classifier, Header, Instance, LabeledSet, MeasureSpec, OvrLogistic, TrainingParams,
    };

    fn blob(prefix: &str, n: usize, center: (f64, f64), labels: [u8; 2]) -> Vec<Instance> {
        (0..n)
            .map(|i| {
                let dx = (i % 3) as f64 * 0.1;
                let dy = (i / 3) as f64 * 0.1;
                Instance::labeled(
                    format!("{prefix}{i}"),
                    vec![center.0 + dx, center.1 + dy],
                    labels.to_vec(),
                )
            })
            .collect()
    }

    fn sets() -> (LabeledSet, Evaluator) {
        let h = Header::anonymous(2, 2);
        let mut train = blob("a", 6, (2.0, 0.0), [1, 0]);
        train.extend(blob("b", 2, (-2.0, 0.0), [0, 1]));
        let mut test = blob("ta", 6, (2.05, 0.05), [1, 0]);
        test.extend(blob("tb", 6, (-1.95, 0.05), [0, 1]));
        let eval = Evaluator::new(
            LabeledSet::from_instances(h.clone(), test).unwrap(),
            "f1.macro".parse::<MeasureSpec>().unwrap(),
            0.5,
        )
        .unwrap();
        (LabeledSet::from_instances(h, train).unwrap(), eval)
    }

    #[test]
    fn flipped_labels_are_rejected() {
        let (train, eval) = sets();
        let params = TrainingParams::default();
        let baseline = eval
            .measure(&OvrLogistic::train(&train, &params).unwrap())
            .unwrap()
            .value;
        let bad = blob("x", 6, (-2.0, 0.1), [1, 0]);
        let step = improvement_step(&params, &train, &bad, &eval, baseline).unwrap();
        assert!(!step.accepted);
        assert!(step.measurement.value < baseline);
    }

    #[test]
    fn ties_are_rejected() {
        let (train, eval) = sets();
        let params = TrainingParams::default();
        let good = blob("y", 3, (-2.0, 0.1), [0, 1]);
        let probe = improvement_step(&params, &train, &good, &eval, f64::NEG_INFINITY).unwrap();
        assert!(probe.accepted);
        let again =
            improvement_step(&params, &train, &good, &eval, probe.measurement.value).unwrap();
        assert!(!again.accepted);
        assert_eq!(again.model.num_classes(), 2);
    }
}
