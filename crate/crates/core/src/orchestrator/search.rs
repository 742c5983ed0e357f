use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use super::config::{ExperimentConfig, Mode};
use super::{check_disjoint_from_pool, extend_pool, objective_eval, PreparedTask, TaskOutcome};
use crate::error::{Error, Result};
use crate::hpo::{
    HyperConfig, PruneDecision, SamplerKind, TrialLedger, TrialRecord, TrialStatus, TrialUpdate,
};
use crate::learner::{train_epoch, ModelState, OptimizerState};
use crate::memory::{select_exemplars, ExemplarMemory, TaskExemplars};
use crate::seed::{derive_seed, rng_for, tag, EngineRng};
use crate::strategies::{wa_align, LossSpec, TeacherSnapshot};
use crate::taskstream::{Example, TaskDataset, ValidationPool};

/// Inputs of one task of the loop.
pub struct TaskContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub seed: u64,
    pub task: &'a PreparedTask,
    pub previous_task: Option<&'a TaskDataset>,
    /// Task whose exemplars are chosen inside this task's trials.
    pub pending_memory: Option<usize>,
    /// Model after the previous task (freshly initialized for the first).
    pub model: &'a ModelState,
    pub teacher: Option<&'a TeacherSnapshot>,
    pub memory: &'a ExemplarMemory,
    pub pool: &'a ValidationPool,
    pub ledger_dir: Option<PathBuf>,
}

/// State handed to the next task.
pub struct TaskResult {
    pub outcome: TaskOutcome,
    pub model: ModelState,
    pub memory: ExemplarMemory,
    pub pool: ValidationPool,
    pub pending_memory: Option<usize>,
    /// Exemplars per class committed for the previous task during this one.
    pub previous_m: Option<usize>,
    pub trials: Vec<TrialRecord>,
}

enum TrialEnd {
    Completed(f64),
    Pruned,
}

struct TrialRun {
    end: TrialEnd,
    epochs: usize,
    model: ModelState,
    pending: Option<TaskExemplars>,
}

struct Trainer<'a> {
    ctx: &'a TaskContext<'a>,
    pool: ValidationPool,
    pool_hashes: HashSet<u64>,
    start: ModelState,
    base_data: Vec<Example>,
    weight_decay: f64,
}

fn is_trial_failure(e: &Error) -> bool {
    matches!(e, Error::Numeric { .. } | Error::Degenerate(_))
}

impl Trainer<'_> {
    fn train(
        &self,
        config: &HyperConfig,
        trial_seed: u64,
        on_rung: &mut dyn FnMut(usize, f64) -> Result<PruneDecision>,
    ) -> Result<TrialRun> {
        let ctx = self.ctx;
        let cfg = ctx.cfg;
        let pending = match (ctx.pending_memory, ctx.previous_task) {
            (Some(_), Some(prev)) if config.m > 0 => Some(select_exemplars(
                prev,
                ctx.model,
                config.m,
                cfg.selector,
                derive_seed(ctx.seed, &[tag("select")]),
            )?),
            _ => None,
        };
        let mut data = self.base_data.clone();
        if let Some(p) = &pending {
            data.extend(p.classes.values().flatten().cloned());
        }
        check_disjoint_from_pool(&data, &self.pool_hashes, "training data")?;

        let loss = match ctx.previous_task {
            Some(_) => LossSpec {
                strategy: cfg.strategy,
                lambda: config.lambda,
                temperature: cfg.training.temperature,
                teacher: ctx.teacher,
            },
            None => LossSpec::plain(),
        };
        let mut model = self.start.clone();
        let mut opt =
            OptimizerState::new(&model, config.eta, cfg.training.momentum, self.weight_decay);
        let mut rng: EngineRng = rng_for(trial_seed, &[tag("shuffle")]);
        let schedule = cfg.schedule();
        let epochs = cfg.training.epochs;
        for epoch in 1..=epochs {
            train_epoch(
                &mut model,
                &mut opt,
                &data,
                &loss,
                cfg.training.batch_size,
                &mut rng,
            )?;
            let rung = schedule.is_rung(epoch);
            if !rung && epoch < epochs {
                continue;
            }
            let value = objective_eval(&model, &self.pool)?;
            if !value.is_finite() {
                return Err(Error::Degenerate(format!(
                    "validation objective is {value} at epoch {epoch}"
                )));
            }
            if rung && on_rung(epoch, value)? == PruneDecision::Prune {
                return Ok(TrialRun {
                    end: TrialEnd::Pruned,
                    epochs: epoch,
                    model,
                    pending,
                });
            }
            if epoch == epochs {
                return Ok(TrialRun {
                    end: TrialEnd::Completed(value),
                    epochs,
                    model,
                    pending,
                });
            }
        }
        unreachable!("epochs is positive")
    }
}

struct Shared {
    ledger: TrialLedger,
    rng: EngineRng,
    issued: usize,
    best: Option<(f64, usize, TrialRun)>,
}

/// Searches (or, in fixed mode and on the first task, simply trains) one task
/// and commits the winner.
pub fn run_task(ctx: &TaskContext<'_>) -> Result<TaskResult> {
    let cfg = ctx.cfg;
    let t = ctx.task.task_id();
    let first = ctx.previous_task.is_none();
    let pool = extend_pool(ctx.pool, ctx.task)?;
    let pool_hashes = pool.hashes();

    let mut start = ctx.model.clone();
    let new_labels: Vec<usize> = ctx
        .task
        .train
        .class_set
        .iter()
        .copied()
        .filter(|l| !start.head_labels.contains(l))
        .collect();
    let old_rows: Vec<usize> = (0..start.num_classes()).collect();
    start.expand_head(&new_labels)?;
    let new_rows: Vec<usize> = (old_rows.len()..start.num_classes()).collect();

    let mut base_data = ctx.task.train.examples.clone();
    base_data.extend(ctx.memory.examples().cloned());
    let trainer = Trainer {
        ctx,
        pool,
        pool_hashes,
        start,
        base_data,
        weight_decay: if first {
            cfg.training.weight_decay_first
        } else {
            cfg.training.weight_decay
        },
    };

    let searching = cfg.mode == Mode::Adaptive && !first;
    let space = if searching {
        cfg.tuned_space()?
    } else {
        Default::default()
    };
    let configs = if searching { cfg.search.configs } else { 1 };
    let pruning = searching;
    let base = cfg.base_config(t)?;
    let schedule = cfg.schedule();
    let ledger_name = format!("task_{t:02}.jsonl");
    let ledger = match &ctx.ledger_dir {
        Some(dir) => TrialLedger::create(&dir.join(&ledger_name), t, schedule)?,
        None => TrialLedger::in_memory(t, schedule),
    };
    let sampler = cfg.search.sampler();
    let shared = Mutex::new(Shared {
        ledger,
        rng: rng_for(ctx.seed, &[tag("tpe"), t as u64]),
        issued: 0,
        best: None,
    });

    let worker = || -> Result<()> {
        loop {
            let (id, config, trial_seed) = {
                let mut s = shared.lock().expect("ledger lock");
                if s.issued == configs {
                    return Ok(());
                }
                s.issued += 1;
                let history = s.ledger.observations();
                let Shared { rng, ledger, .. } = &mut *s;
                let config = if searching {
                    SamplerKind::Tpe.suggest(&sampler, &space, &history, &base, rng)
                } else {
                    base
                };
                let id = ledger.trials().len();
                let trial_seed = derive_seed(ctx.seed, &[tag("trial"), t as u64, id as u64]);
                ledger.try_start_trial(config, trial_seed)?;
                (id, config, trial_seed)
            };
            let started = Instant::now();
            let mut on_rung = |epoch: usize, loss: f64| -> Result<PruneDecision> {
                let mut s = shared.lock().expect("ledger lock");
                let decision = if pruning && epoch < schedule.max_epochs {
                    schedule.decide(&s.ledger, id, epoch, loss)
                } else {
                    PruneDecision::Continue
                };
                s.ledger.report_rung(id, epoch, loss)?;
                Ok(decision)
            };
            let run = trainer.train(&config, trial_seed, &mut on_rung);
            let duration_ms = started.elapsed().as_millis() as u64;
            let mut s = shared.lock().expect("ledger lock");
            match run {
                Ok(run) => match run.end {
                    TrialEnd::Completed(objective) => {
                        s.ledger.record_result(
                            id,
                            TrialUpdate::Complete {
                                objective,
                                epochs: run.epochs,
                                duration_ms,
                            },
                        )?;
                        let better = s
                            .best
                            .as_ref()
                            .is_none_or(|(b, bid, _)| (objective, id) < (*b, *bid));
                        if better {
                            s.best = Some((objective, id, run));
                        }
                    }
                    TrialEnd::Pruned => {
                        s.ledger.record_result(
                            id,
                            TrialUpdate::Prune {
                                epochs: run.epochs,
                                duration_ms,
                            },
                        )?;
                    }
                },
                Err(e) if is_trial_failure(&e) => {
                    log::warn!("task {t} trial {id} failed: {e}");
                    let epochs = s.ledger.trial(id)?.epochs;
                    s.ledger.record_result(
                        id,
                        TrialUpdate::Fail {
                            epochs,
                            duration_ms,
                            reason: e.to_string(),
                        },
                    )?;
                }
                Err(e) => return Err(e),
            }
        }
    };

    if cfg.workers <= 1 || configs == 1 {
        worker()?;
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..cfg.workers.min(configs))
                .map(|_| scope.spawn(worker))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::state("trial worker panicked")))
                })
                .collect::<Result<Vec<()>>>()
        })?;
    }

    let Shared { ledger, best, .. } = shared.into_inner().expect("ledger lock");
    let record = ledger.best_trial()?.clone();
    let (objective, best_id, mut run) =
        best.ok_or_else(|| Error::state(format!("task {t}: no completed trial")))?;
    debug_assert_eq!(best_id, record.trial_id);
    if cfg.retrain_best && searching {
        run = trainer.train(&record.config, record.seed, &mut |_, _| {
            Ok(PruneDecision::Continue)
        })?;
    }

    let mut model = run.model;
    let mut memory = ctx.memory.clone();
    let previous_m = match run.pending {
        Some(p) => {
            memory.commit(p)?;
            Some(record.config.m)
        }
        None => ctx.pending_memory.map(|_| record.config.m),
    };
    if cfg.strategy == crate::strategies::Strategy::Wa && !first {
        model = wa_align(&model, &old_rows, &new_rows)?;
    }
    let mut pending_memory = None;
    if cfg.uses_memory() {
        if first && cfg.mode == Mode::Adaptive && cfg.tune.m {
            pending_memory = Some(t);
        } else if record.config.m > 0 {
            memory.update(
                &ctx.task.train,
                &model,
                record.config.m,
                cfg.selector,
                derive_seed(ctx.seed, &[tag("select")]),
            )?;
        }
    }

    let count = |s: TrialStatus| ledger.trials().iter().filter(|r| r.status == s).count();
    let outcome = TaskOutcome {
        task_id: t,
        config: record.config,
        best_objective: objective,
        accuracy_row: Vec::new(),
        memory_total: memory.total(),
        trials: ledger.trials().len(),
        pruned: count(TrialStatus::Pruned),
        failed: count(TrialStatus::Failed),
        epochs_trained: ledger.epochs_consumed(),
        ledger: ctx
            .ledger_dir
            .as_ref()
            .map(|_| format!("ledger/{ledger_name}")),
    };
    Ok(TaskResult {
        outcome,
        model,
        memory,
        pool: trainer.pool,
        pending_memory,
        previous_m,
        trials: ledger.trials().to_vec(),
    })
}
