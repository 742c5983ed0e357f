mod common;

use adacl_core::hpo::{
    bench_objective, bench_space, HyperConfig, PruneDecision, SamplerKind, SuccessiveHalving,
    TpeSampler, TrialLedger, TrialStatus, TrialUpdate,
};
use adacl_core::seed::rng_for;
use rand::Rng;

fn base() -> HyperConfig {
    HyperConfig {
        eta: 0.0,
        lambda: 1.0,
        m: 0,
    }
}

/// Runs a simulated search where every trial's loss curve decays towards its
/// benchmark objective, pruning per the schedule.
fn simulate(path: &std::path::Path, trials: usize, seed: u64) -> TrialLedger {
    let sh = SuccessiveHalving::new(27);
    let mut ledger = TrialLedger::create(path, 2, sh).unwrap();
    let tpe = TpeSampler::default();
    let space = bench_space();
    let mut rng = rng_for(seed, &[]);
    for _ in 0..trials {
        let cfg = SamplerKind::Tpe.suggest(&tpe, &space, &ledger.observations(), &base(), &mut rng);
        let id = ledger.start_trial(cfg, rng.random());
        let target = bench_objective(&cfg);
        let mut stopped = None;
        for epoch in sh.rungs() {
            let loss = target + 1.0 / epoch as f64;
            let decision = sh.decide(&ledger, id, epoch, loss);
            ledger.report_rung(id, epoch, loss).unwrap();
            if decision == PruneDecision::Prune {
                stopped = Some(epoch);
                break;
            }
        }
        let update = match stopped {
            Some(epochs) => TrialUpdate::Prune {
                epochs,
                duration_ms: 0,
            },
            None => TrialUpdate::Complete {
                objective: target,
                epochs: 27,
                duration_ms: 0,
            },
        };
        ledger.record_result(id, update).unwrap();
    }
    ledger
}

#[test]
fn prune_decisions_replay_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trials.jsonl");
    let live = simulate(&path, 30, 4);
    let reloaded = TrialLedger::load(&path, live.schedule()).unwrap();
    assert_eq!(reloaded.trials(), live.trials());

    // Each recorded decision must be reproducible from the trials that had
    // reported at that rung before it.
    let sh = live.schedule();
    let mut partial = TrialLedger::in_memory(2, sh);
    for rec in reloaded.trials() {
        let id = partial.start_trial(rec.config, rec.seed);
        for (i, rung) in rec.rungs.iter().enumerate() {
            let decision = sh.decide(&partial, id, rung.epoch, rung.loss);
            let last = i + 1 == rec.rungs.len();
            let expected = if last && rec.status == TrialStatus::Pruned {
                PruneDecision::Prune
            } else {
                PruneDecision::Continue
            };
            assert_eq!(decision, expected, "trial {id} at epoch {}", rung.epoch);
            partial.report_rung(id, rung.epoch, rung.loss).unwrap();
        }
        let update = match rec.status {
            TrialStatus::Pruned => TrialUpdate::Prune {
                epochs: rec.epochs,
                duration_ms: 0,
            },
            _ => TrialUpdate::Complete {
                objective: rec.final_objective.unwrap(),
                epochs: rec.epochs,
                duration_ms: 0,
            },
        };
        partial.record_result(id, update).unwrap();
    }
}

#[test]
fn consumed_epochs_match_the_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = simulate(&dir.path().join("t.jsonl"), 25, 8);
    let by_hand: usize = ledger
        .trials()
        .iter()
        .map(|r| match r.status {
            TrialStatus::Completed => 27,
            _ => r.rungs.last().unwrap().epoch,
        })
        .sum();
    assert_eq!(ledger.epochs_consumed(), by_hand);
    assert!(by_hand < 25 * 27);
    assert!(ledger
        .trials()
        .iter()
        .any(|r| r.status == TrialStatus::Pruned));
}

#[test]
fn best_trial_is_the_minimum_completed_objective() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = simulate(&dir.path().join("t.jsonl"), 20, 1);
    let best = ledger.best_trial().unwrap();
    let min = ledger
        .trials()
        .iter()
        .filter(|r| r.status == TrialStatus::Completed)
        .map(|r| r.final_objective.unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best.final_objective, Some(min));
}

#[test]
fn ledger_rejects_updates_after_termination() {
    let mut ledger = TrialLedger::in_memory(1, SuccessiveHalving::new(9));
    let id = ledger.start_trial(base(), 0);
    ledger.report_rung(id, 1, 0.5).unwrap();
    assert!(ledger.report_rung(id, 1, 0.4).is_err());
    ledger
        .record_result(
            id,
            TrialUpdate::Prune {
                epochs: 1,
                duration_ms: 0,
            },
        )
        .unwrap();
    assert!(ledger
        .record_result(
            id,
            TrialUpdate::Prune {
                epochs: 1,
                duration_ms: 0
            }
        )
        .is_err());
    assert!(ledger.report_rung(id, 3, 0.4).is_err());
}

#[test]
fn suggestions_are_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(&dir.path().join("a.jsonl"), 15, 2);
    let b = simulate(&dir.path().join("b.jsonl"), 15, 2);
    assert_eq!(a.trials(), b.trials());
}
