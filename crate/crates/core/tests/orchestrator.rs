mod common;

use adacl_core::hpo::{DimensionKind, SuccessiveHalving, TrialLedger, TrialStatus};
use adacl_core::orchestrator::{run_experiment, run_fixed_baseline, TuneFlags};
use adacl_core::taskstream::StreamSpec;
use adacl_core::{Error, Strategy};
use common::*;

fn small_stream(tasks: usize) -> StreamSpec {
    StreamSpec::uniform_blobs(tasks, 2, 60, 8, 4.0, 1.0, 21)
}

fn quick_adaptive(strategy: Strategy, tasks: usize) -> adacl_core::ExperimentConfig {
    let mut c = adaptive(strategy, small_stream(tasks));
    c.training.epochs = 9;
    c.search.configs = 8;
    c.spaces.m = dim(DimensionKind::Integer, 1.0, 20.0);
    c
}

#[test]
fn tuned_eta_stays_in_range_and_matches_the_ledger() {
    let mut cfg = quick_adaptive(Strategy::Lwf, 2);
    cfg.tune = TuneFlags {
        eta: true,
        lambda: false,
        m: false,
    };
    cfg.fixed.m = Some(0);
    let dir = tempfile::tempdir().unwrap();
    let run = run_experiment(&cfg, Some(dir.path())).unwrap().remove(0);
    let outcome = &run.outcomes[1];
    assert!(
        (0.05..=0.1).contains(&outcome.config.eta),
        "{}",
        outcome.config.eta
    );

    let log = dir
        .path()
        .join("seed_0")
        .join(outcome.ledger.as_ref().unwrap());
    let ledger = TrialLedger::load(&log, cfg.schedule()).unwrap();
    let best = ledger.best_trial().unwrap();
    assert_eq!(best.config, outcome.config);
    assert_eq!(best.final_objective, Some(outcome.best_objective));
    assert_eq!(ledger.trials().len(), 8);
}

#[test]
fn a_single_config_search_runs_one_trial_per_task() {
    let mut cfg = quick_adaptive(Strategy::Ewc, 3);
    cfg.search.configs = 1;
    cfg.tune = TuneFlags {
        eta: true,
        lambda: true,
        m: false,
    };
    cfg.fixed.m = Some(0);
    let run = run_experiment(&cfg, None).unwrap().remove(0);
    for o in &run.outcomes[1..] {
        assert_eq!(o.trials, 1);
        assert_eq!(o.pruned, 0);
    }
    assert!(run
        .trials
        .iter()
        .all(|r| r.status == TrialStatus::Completed));
}

#[test]
fn adaptive_mode_without_tuned_dimensions_is_a_config_error() {
    let mut cfg = quick_adaptive(Strategy::Ewc, 2);
    cfg.tune = TuneFlags {
        eta: false,
        lambda: false,
        m: false,
    };
    let err = run_experiment(&cfg, None).unwrap_err();
    assert!(err.is_configuration(), "{err}");
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn single_task_stream_has_no_bwt() {
    let cfg = fixed(Strategy::None, small_stream(1), 0.075, 0.0, 0);
    let run = run_fixed_baseline(&cfg, None).unwrap().remove(0);
    assert_eq!(run.accuracy.tasks(), 1);
    assert_eq!(run.bwt, None);
    assert!(run.acc > 50.0);
}

#[test]
fn ewc_with_zero_lambda_matches_plain_training() {
    let none =
        run_fixed_baseline(&fixed(Strategy::None, small_stream(3), 0.075, 0.0, 0), None).unwrap();
    let ewc =
        run_fixed_baseline(&fixed(Strategy::Ewc, small_stream(3), 0.075, 0.0, 0), None).unwrap();
    assert_eq!(none[0].accuracy, ewc[0].accuracy);
}

#[test]
fn fixed_mode_records_one_unpruned_trial_per_task() {
    let cfg = fixed(Strategy::Icarl, small_stream(3), 0.075, 1.0, 5);
    let run = run_fixed_baseline(&cfg, None).unwrap().remove(0);
    assert_eq!(run.outcomes.len(), 3);
    assert_eq!(run.memory_total, 3 * 2 * 5);
    for o in &run.outcomes {
        assert_eq!((o.trials, o.pruned), (1, 0));
        assert_eq!(o.config.m, 5);
    }
    let rungs = SuccessiveHalving::new(cfg.training.epochs).rungs();
    let recorded: Vec<usize> = run.trials[0].rungs.iter().map(|r| r.epoch).collect();
    assert_eq!(recorded, rungs);
}

#[test]
fn accuracy_matrix_is_lower_triangular_and_complete() {
    let cfg = fixed(Strategy::Lwf, small_stream(4), 0.075, 1.0, 0);
    let run = run_fixed_baseline(&cfg, None).unwrap().remove(0);
    for (i, row) in run.accuracy.rows().iter().enumerate() {
        assert_eq!(row.len(), i + 1);
        assert!(row.iter().all(|a| (0.0..=100.0).contains(a)));
    }
    assert_eq!(
        run.outcomes
            .iter()
            .map(|o| o.accuracy_row.clone())
            .collect::<Vec<_>>(),
        run.accuracy.rows().to_vec()
    );
}

#[test]
fn seeds_produce_independent_runs() {
    let mut cfg = fixed(Strategy::None, small_stream(2), 0.075, 0.0, 0);
    cfg.seeds = vec![3, 4];
    let runs = run_fixed_baseline(&cfg, None).unwrap();
    assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![3, 4]);
    let again =
        run_fixed_baseline(&fixed(Strategy::None, small_stream(2), 0.075, 0.0, 0), None).unwrap();
    assert_eq!(again[0].seed, 0);
}

#[test]
fn multi_worker_runs_complete_with_full_ledgers() {
    let mut cfg = quick_adaptive(Strategy::Icarl, 2);
    cfg.workers = 3;
    let run = run_experiment(&cfg, None).unwrap().remove(0);
    assert_eq!(run.outcomes[1].trials, 8);
    let expected: usize = run.outcomes.iter().map(|o| o.config.m * 2).sum();
    assert_eq!(run.memory_total, expected);
}

#[test]
fn memory_larger_than_a_class_is_rejected_before_training() {
    let mut cfg = quick_adaptive(Strategy::Icarl, 2);
    cfg.spaces.m = dim(DimensionKind::Integer, 1.0, 50.0);
    let err = run_experiment(&cfg, None).unwrap_err();
    assert!(err.is_configuration(), "{err}");
}
