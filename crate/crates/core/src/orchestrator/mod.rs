//! The per-task search, train and evaluate loop, fixed-hyperparameter
//! baselines and the constancy schedules they use.

mod config;
mod search;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{
    DimensionSpec, EvaluationMode, ExperimentConfig, FixedValues, LambdaSchedule, MemorySchedule,
    Mode, ModelConfig, SearchConfig, Spaces, StreamSource, TrainingConfig, TuneFlags,
};
pub use search::{run_task, TaskContext, TaskResult};

use crate::error::{Error, Result};
use crate::hpo::{HyperConfig, ParamName, TrialRecord};
use crate::learner::{evaluate_accuracy, EvalMode, ModelState};
use crate::memory::{ExemplarMemory, ManifestEntry};
use crate::metrics::{acc, bwt, AccuracyMatrix};
use crate::seed::{derive_seed, tag};
use crate::strategies::{estimate_fisher, merge_fisher, ClassMeans, Strategy, TeacherSnapshot};
use crate::taskstream::{
    accumulate_validation, generate_stream, load_stream_file, split_validation, Example, HeldOut,
    TaskDataset, ValidationPool,
};

/// `t / (t + 1)`, the regularization weight after `t` learned tasks of `c`
/// classes each (`t*c / (t*c + c)`; `c` cancels).
pub fn lambda_schedule(t: usize) -> f64 {
    t as f64 / (t as f64 + 1.0)
}

/// `floor(total / t)`.
pub fn memory_schedule(total: usize, t: usize) -> usize {
    total / t.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Lambda,
    Memory,
}

/// Scheduled value for task index `t >= 1`, `c` classes per task and total
/// memory `total`.
pub fn constancy_schedule(kind: ScheduleKind, t: usize, c: usize, total: usize) -> f64 {
    debug_assert!(t >= 1 && c >= 1);
    match kind {
        ScheduleKind::Lambda => lambda_schedule(t),
        ScheduleKind::Memory => memory_schedule(total, t) as f64,
    }
}

/// Mean cross-entropy of `model` over every example in `pool`.
pub fn objective_eval(model: &ModelState, pool: &ValidationPool) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::validation("validation pool is empty"));
    }
    let rows = model.label_rows();
    if let Some(c) = pool.classes.keys().find(|c| !rows.contains_key(c)) {
        return Err(Error::validation(format!(
            "validation class {c} is not covered by the model head"
        )));
    }
    let examples: Vec<&Example> = pool.examples().collect();
    let (x, n) = model.flatten_batch(examples.iter().map(|e| e.features.as_slice()))?;
    let cache = model.forward_cached(x, n);
    let k = model.num_classes();
    let total: f64 = cache
        .logits()
        .chunks_exact(k)
        .zip(&examples)
        .map(|(z, e)| {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - z[rows[&e.label]]
        })
        .sum();
    Ok(total / n as f64)
}

/// What the loop decided and measured for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: usize,
    pub config: HyperConfig,
    pub best_objective: f64,
    pub accuracy_row: Vec<f64>,
    pub memory_total: usize,
    pub trials: usize,
    pub pruned: usize,
    pub failed: usize,
    pub epochs_trained: usize,
    /// Trial log of the search, relative to the seed directory.
    pub ledger: Option<String>,
}

/// Everything produced for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub accuracy: AccuracyMatrix,
    pub acc: f64,
    pub bwt: Option<f64>,
    pub outcomes: Vec<TaskOutcome>,
    pub memory_total: usize,
    pub memory: Vec<ManifestEntry>,
    #[serde(skip)]
    pub trials: Vec<TrialRecord>,
    #[serde(skip)]
    pub wall_ms: u64,
}

/// One task after test and validation examples were taken out.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub train: TaskDataset,
    pub validation: HeldOut,
    pub test: Vec<Example>,
}

impl PreparedTask {
    pub fn task_id(&self) -> usize {
        self.train.task_id
    }
}

/// Loads or generates the stream for `seed` and carves out test and
/// validation examples per class.
pub fn prepare_tasks(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<PreparedTask>> {
    let tasks = match &cfg.stream {
        StreamSource::Generate(spec) => {
            let mut spec = spec.clone();
            spec.seed = derive_seed(spec.seed, &[tag("stream"), seed]);
            generate_stream(&spec)?
        }
        StreamSource::File(path) => load_stream_file(path)?,
    };
    tasks
        .iter()
        .map(|task| {
            let (rest, test) =
                split_validation(task, cfg.test_per_class, derive_seed(seed, &[tag("test")]))?;
            let (train, validation) = split_validation(
                &rest,
                cfg.validation_per_class,
                derive_seed(seed, &[tag("validation")]),
            )?;
            Ok(PreparedTask {
                train,
                validation,
                test: test.into_values().flatten().collect(),
            })
        })
        .collect()
}

/// Class means from stored exemplars, falling back to a task's training data
/// for classes without exemplars.
fn nme_means(
    model: &ModelState,
    memory: &ExemplarMemory,
    tasks: &[PreparedTask],
) -> Result<ClassMeans> {
    let mut by_class = memory.by_class();
    for task in tasks {
        for &c in &task.train.class_set {
            if by_class.get(&c).is_none_or(|v| v.is_empty()) {
                by_class.insert(c, task.train.class_examples(c).collect());
            }
        }
    }
    ClassMeans::compute(model, &by_class)
}

fn accuracy_row(
    cfg: &ExperimentConfig,
    model: &ModelState,
    memory: &ExemplarMemory,
    seen: &[PreparedTask],
) -> Result<Vec<f64>> {
    let means = if cfg.uses_nme() {
        Some(nme_means(model, memory, seen)?)
    } else {
        None
    };
    seen.iter()
        .map(|t| {
            let mode = match &means {
                Some(m) => EvalMode::Nme(m),
                None => EvalMode::Softmax,
            };
            evaluate_accuracy(model, &t.test, mode)
        })
        .collect()
}

fn snapshot(
    cfg: &ExperimentConfig,
    model: &ModelState,
    train: &TaskDataset,
    previous: Option<&TeacherSnapshot>,
) -> Result<Option<TeacherSnapshot>> {
    if !cfg.strategy.needs_teacher() {
        return Ok(None);
    }
    let fisher = if cfg.strategy == Strategy::Ewc {
        let new = estimate_fisher(model, &train.examples, cfg.training.fisher_samples)?;
        Some(
            match previous.and_then(|p| p.fisher.as_ref().map(|f| (f, p.model.num_classes()))) {
                Some((old, old_classes)) => {
                    merge_fisher(old, &new, old_classes, model.num_classes())?
                }
                None => new,
            },
        )
    } else {
        None
    };
    Ok(Some(TeacherSnapshot {
        model: model.clone(),
        fisher,
    }))
}

fn check_disjoint_from_pool(
    data: &[Example],
    pool_hashes: &HashSet<u64>,
    what: &str,
) -> Result<()> {
    if let Some(e) = data
        .iter()
        .find(|e| pool_hashes.contains(&e.content_hash()))
    {
        return Err(Error::validation(format!(
            "{what} contains a held-out example of class {}",
            e.label
        )));
    }
    Ok(())
}

/// Rejects configs that could ask for more exemplars than a class has
/// training examples, before any training starts.
fn check_memory_fits(cfg: &ExperimentConfig, tasks: &[PreparedTask]) -> Result<()> {
    if !cfg.uses_memory() {
        return Ok(());
    }
    let largest = match cfg.tuned_space()?.get(ParamName::M) {
        Some(d) => d.high as usize,
        None => (1..=tasks.len())
            .map(|t| cfg.base_config(t).map(|c| c.m))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .max()
            .unwrap_or(0),
    };
    for task in tasks {
        for &label in &task.train.class_set {
            let n = task.train.class_count(label);
            if n < largest {
                return Err(Error::config(format!(
                    "class {label} has {n} training examples, fewer than the {largest} exemplars per class the config allows"
                )));
            }
        }
    }
    Ok(())
}

/// Runs every task of one seed. Trial logs go under `seed_dir/ledger` when a
/// directory is given.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, seed_dir: Option<&Path>) -> Result<SeedRun> {
    cfg.validate()?;
    let start = Instant::now();
    let tasks = prepare_tasks(cfg, seed)?;
    let first = tasks
        .first()
        .ok_or_else(|| Error::config("stream has no tasks"))?;
    check_memory_fits(cfg, &tasks)?;
    let input_dim = first
        .train
        .feature_dim()
        .ok_or_else(|| Error::config("first task is empty"))?;

    let mut model = ModelState::with_labels(
        input_dim,
        &cfg.model.hidden,
        cfg.model.activation,
        &first.train.class_set.iter().copied().collect::<Vec<_>>(),
        derive_seed(seed, &[tag("init")]),
    )?;
    let mut memory = ExemplarMemory::new(cfg.memory_cap);
    let mut pool = ValidationPool::new(cfg.validation_per_class);
    let mut teacher: Option<TeacherSnapshot> = None;
    let mut matrix = AccuracyMatrix::new();
    let mut outcomes: Vec<TaskOutcome> = Vec::new();
    let mut trials: Vec<TrialRecord> = Vec::new();
    let mut pending_memory: Option<usize> = None;

    for (idx, task) in tasks.iter().enumerate() {
        let t = task.task_id();
        let ctx = TaskContext {
            cfg,
            seed,
            task,
            previous_task: idx.checked_sub(1).map(|i| &tasks[i].train),
            pending_memory,
            model: &model,
            teacher: teacher.as_ref(),
            memory: &memory,
            pool: &pool,
            ledger_dir: seed_dir.map(|d| d.join("ledger")),
        };
        let result = run_task(&ctx)?;
        let all_data: Vec<Example> = result.memory.examples().cloned().collect();
        check_disjoint_from_pool(&all_data, &result.pool.hashes(), "exemplar memory")?;

        model = result.model;
        memory = result.memory;
        pool = result.pool;
        pending_memory = result.pending_memory;
        teacher = snapshot(cfg, &model, &task.train, teacher.as_ref())?;

        if let Some(prev) = result.previous_m {
            if let Some(o) = outcomes.last_mut() {
                o.config.m = prev;
            }
        }
        let row = accuracy_row(cfg, &model, &memory, &tasks[..=idx])?;
        matrix.push_row(row.clone())?;
        let mut outcome = result.outcome;
        outcome.accuracy_row = row;
        outcome.memory_total = memory.total();
        log::info!(
            "seed {seed} task {t}: eta={:.4} lambda={:.4} m={} objective={:.4} acc={:.2}",
            outcome.config.eta,
            outcome.config.lambda,
            outcome.config.m,
            outcome.best_objective,
            outcome.accuracy_row.iter().sum::<f64>() / outcome.accuracy_row.len() as f64
        );
        outcomes.push(outcome);
        trials.extend(result.trials);
    }

    Ok(SeedRun {
        seed,
        acc: acc(&matrix)?,
        bwt: bwt(&matrix).ok(),
        accuracy: matrix,
        outcomes,
        memory_total: memory.total(),
        memory: memory.manifest(),
        trials,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Runs every seed of `cfg` (adaptive or fixed as configured).
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    cfg.seeds
        .iter()
        .map(|&s| {
            run_seed(
                cfg,
                s,
                out_dir.map(|d| d.join(format!("seed_{s}"))).as_deref(),
            )
        })
        .collect()
}

/// The same pipeline with one full-length training run per task at the fixed
/// or scheduled hyperparameters.
pub fn run_fixed_baseline(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<SeedRun>> {
    if cfg.mode != Mode::Fixed {
        return Err(Error::config("the fixed baseline needs mode = fixed"));
    }
    run_experiment(cfg, out_dir)
}

/// Per-class counts of the accumulated pool, for diagnostics.
pub fn pool_counts(pool: &ValidationPool) -> BTreeMap<usize, usize> {
    pool.classes.iter().map(|(&c, v)| (c, v.len())).collect()
}

/// Adds a task's held-out examples to the pool.
pub(crate) fn extend_pool(pool: &ValidationPool, task: &PreparedTask) -> Result<ValidationPool> {
    accumulate_validation(pool, &task.validation)
}
