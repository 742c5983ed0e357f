use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpo::TrialRecord;
use crate::memory::ManifestEntry;
use crate::metrics::{acc, bwt, summarize, Summary};
use crate::orchestrator::{ExperimentConfig, SeedRun};

/// Engine identifier written into every results file.
pub const ENGINE_VERSION: &str = concat!("adacl ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub acc: Summary,
    /// Absent when the stream has a single task.
    pub bwt: Option<Summary>,
    pub memory_total: Summary,
}

/// All seeds of one experiment plus their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub engine: String,
    pub label: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedRun>,
    pub aggregate: Aggregates,
}

impl ResultsBundle {
    pub fn new(config: ExperimentConfig, seeds: Vec<SeedRun>) -> Result<Self> {
        let aggregate = compute_aggregates(&seeds)?;
        let label = config.name.clone().unwrap_or_else(|| {
            let prefix = match config.mode {
                crate::orchestrator::Mode::Adaptive => "ada-",
                crate::orchestrator::Mode::Fixed => "",
            };
            format!("{prefix}{}", config.strategy)
        });
        Ok(Self {
            engine: ENGINE_VERSION.to_string(),
            label,
            config,
            seeds,
            aggregate,
        })
    }

    /// Mean ACC across seeds.
    pub fn mean_acc(&self) -> f64 {
        self.aggregate.acc.mean
    }

    pub fn mean_bwt(&self) -> Option<f64> {
        self.aggregate.bwt.map(|s| s.mean)
    }
}

/// ACC, BWT and memory summaries recomputed from each seed's matrix.
pub fn compute_aggregates(seeds: &[SeedRun]) -> Result<Aggregates> {
    if seeds.is_empty() {
        return Err(Error::validation(
            "a results bundle needs at least one seed",
        ));
    }
    let accs = seeds
        .iter()
        .map(|s| acc(&s.accuracy))
        .collect::<Result<Vec<_>>>()?;
    let bwts: Vec<f64> = seeds.iter().filter_map(|s| bwt(&s.accuracy).ok()).collect();
    let mems: Vec<f64> = seeds.iter().map(|s| s.memory_total as f64).collect();
    Ok(Aggregates {
        acc: summarize(&accs).expect("non-empty"),
        bwt: if bwts.len() == seeds.len() {
            summarize(&bwts)
        } else {
            None
        },
        memory_total: summarize(&mems).expect("non-empty"),
    })
}

/// Timing and environment details kept out of `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub engine: String,
    pub created_unix_ms: u128,
    pub workers: usize,
    pub deterministic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
    pub seed_wall_ms: BTreeMap<u64, u64>,
    /// `seed -> [(task, trial, duration_ms)]`.
    pub trial_durations: BTreeMap<u64, Vec<(usize, usize, Option<u64>)>>,
}

impl RunMeta {
    pub fn for_runs(workers: usize, seeds: &[SeedRun]) -> Self {
        let deterministic = workers <= 1;
        Self {
            engine: ENGINE_VERSION.to_string(),
            created_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            workers,
            deterministic,
            notice: (!deterministic).then(|| {
                format!("{workers} workers evaluated trials concurrently; trial order and results are not reproducible")
            }),
            seed_wall_ms: seeds.iter().map(|s| (s.seed, s.wall_ms)).collect(),
            trial_durations: seeds
                .iter()
                .map(|s| (s.seed, s.trials.iter().map(|t| (t.task_id, t.trial_id, t.duration_ms)).collect()))
                .collect(),
        }
    }
}

/// Per-seed exemplar memory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub seed: u64,
    pub memory_total: usize,
    pub per_task: BTreeMap<usize, usize>,
    pub entries: Vec<ManifestEntry>,
}

impl MemoryReport {
    pub fn from_run(run: &SeedRun) -> Self {
        let per_task = run
            .outcomes
            .iter()
            .map(|o| (o.task_id, o.config.m))
            .collect();
        Self {
            seed: run.seed,
            memory_total: run.memory_total,
            per_task,
            entries: run.memory.clone(),
        }
    }
}

pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Trial records as JSONL with durations removed, so reruns compare equal.
pub fn trials_jsonl(trials: &[TrialRecord]) -> Result<String> {
    let mut out = String::new();
    for t in trials {
        let mut t = t.clone();
        t.duration_ms = None;
        out.push_str(&serde_json::to_string(&t).map_err(|e| Error::Json {
            path: PathBuf::from("trials.jsonl"),
            source: e,
        })?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes `results.json` and `run-meta.json` to `out_dir`, and
/// `results.json`, `trials.jsonl` and `memory.json` to each `seed_<s>/`.
/// Returns the written paths.
pub fn write_results(
    bundle: &ResultsBundle,
    meta: &RunMeta,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = vec![write_bundle(bundle, out_dir)?];
    let meta_path = out_dir.join("run-meta.json");
    write_json(&meta_path, meta)?;
    written.push(meta_path);
    for run in &bundle.seeds {
        let dir = seed_dir(out_dir, run.seed);
        let results = dir.join("results.json");
        write_json(&results, run)?;
        let trials = dir.join("trials.jsonl");
        write_file(&trials, trials_jsonl(&run.trials)?.as_bytes())?;
        let memory = dir.join("memory.json");
        write_json(&memory, &MemoryReport::from_run(run))?;
        written.extend([results, trials, memory]);
    }
    Ok(written)
}

/// Writes only the top-level `results.json`.
pub fn write_bundle(bundle: &ResultsBundle, out_dir: &Path) -> Result<PathBuf> {
    let top = out_dir.join("results.json");
    write_json(&top, bundle)?;
    Ok(top)
}

/// Reads the bundle written by [`write_results`], including trial records.
pub fn read_results(out_dir: &Path) -> Result<ResultsBundle> {
    let path = out_dir.join("results.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut bundle: ResultsBundle =
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    for run in bundle.seeds.iter_mut() {
        let trials = seed_dir(out_dir, run.seed).join("trials.jsonl");
        if let Ok(text) = fs::read_to_string(&trials) {
            run.trials = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str(l).map_err(|e| Error::Parse {
                        line: i + 1,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<_>>()?;
        }
    }
    Ok(bundle)
}
