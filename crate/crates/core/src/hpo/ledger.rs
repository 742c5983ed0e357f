use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pruner::SuccessiveHalving;
use super::space::HyperConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Running,
    Pruned,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RungLoss {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub task_id: usize,
    pub config: HyperConfig,
    pub rungs: Vec<RungLoss>,
    pub status: TrialStatus,
    #[serde(rename = "final")]
    pub final_objective: Option<f64>,
    pub seed: u64,
    /// Epochs actually trained.
    pub epochs: usize,
    pub duration_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    /// The objective TPE learns from: the final value when completed, the
    /// last rung loss when pruned.
    pub fn observed_objective(&self) -> Option<f64> {
        match self.status {
            TrialStatus::Completed => self.final_objective,
            TrialStatus::Pruned => self.rungs.last().map(|r| r.loss),
            _ => None,
        }
    }
}

/// A terminal transition for a running trial.
#[derive(Debug, Clone, PartialEq)]
pub enum TrialUpdate {
    Complete {
        objective: f64,
        epochs: usize,
        duration_ms: u64,
    },
    Prune {
        epochs: usize,
        duration_ms: u64,
    },
    Fail {
        epochs: usize,
        duration_ms: u64,
        reason: String,
    },
}

struct LogSink {
    path: PathBuf,
    file: File,
}

/// Trials of one task's search, mirrored to an append-only JSONL log.
pub struct TrialLedger {
    task_id: usize,
    schedule: SuccessiveHalving,
    trials: Vec<TrialRecord>,
    sink: Option<LogSink>,
}

impl std::fmt::Debug for TrialLedger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrialLedger")
            .field("task_id", &self.task_id)
            .field("schedule", &self.schedule)
            .field("trials", &self.trials)
            .field("log", &self.sink.as_ref().map(|s| &s.path))
            .finish()
    }
}

impl TrialLedger {
    pub fn in_memory(task_id: usize, schedule: SuccessiveHalving) -> Self {
        Self {
            task_id,
            schedule,
            trials: Vec::new(),
            sink: None,
        }
    }

    /// A fresh ledger logging to `path`, truncating any previous content.
    pub fn create(path: &Path, task_id: usize, schedule: SuccessiveHalving) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            task_id,
            schedule,
            trials: Vec::new(),
            sink: Some(LogSink {
                path: path.to_path_buf(),
                file,
            }),
        })
    }

    /// Rebuilds a ledger from its log, keeping the last line per trial, and
    /// continues appending to it.
    pub fn load(path: &Path, schedule: SuccessiveHalving) -> Result<Self> {
        let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut latest: BTreeMap<usize, TrialRecord> = BTreeMap::new();
        let mut task_id = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TrialRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if *task_id.get_or_insert(rec.task_id) != rec.task_id {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "trial log mixes tasks".into(),
                });
            }
            latest.insert(rec.trial_id, rec);
        }
        let trials: Vec<TrialRecord> = latest.into_values().collect();
        if trials.iter().enumerate().any(|(i, t)| t.trial_id != i) {
            return Err(Error::validation(format!(
                "trial ids in {} are not dense",
                path.display()
            )));
        }
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            task_id: task_id.unwrap_or(0),
            schedule,
            trials,
            sink: Some(LogSink {
                path: path.to_path_buf(),
                file,
            }),
        })
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn schedule(&self) -> SuccessiveHalving {
        self.schedule
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn trial(&self, id: usize) -> Result<&TrialRecord> {
        self.trials
            .get(id)
            .ok_or_else(|| Error::state(format!("no trial {id}")))
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|s| s.path.as_path())
    }

    fn append(&mut self, id: usize, sync: bool) -> Result<()> {
        if let Some(sink) = &mut self.sink {
            let mut line =
                serde_json::to_string(&self.trials[id]).map_err(|e| Error::json(&sink.path, e))?;
            line.push('\n');
            sink.file
                .write_all(line.as_bytes())
                .map_err(|e| Error::io(&sink.path, e))?;
            sink.file.flush().map_err(|e| Error::io(&sink.path, e))?;
            if sync {
                sink.file
                    .sync_data()
                    .map_err(|e| Error::io(&sink.path, e))?;
            }
        }
        Ok(())
    }

    /// Registers a running trial and returns its id.
    pub fn start_trial(&mut self, config: HyperConfig, seed: u64) -> usize {
        self.try_start_trial(config, seed)
            .expect("in-memory ledger append cannot fail")
    }

    pub fn try_start_trial(&mut self, config: HyperConfig, seed: u64) -> Result<usize> {
        let id = self.trials.len();
        self.trials.push(TrialRecord {
            trial_id: id,
            task_id: self.task_id,
            config,
            rungs: Vec::new(),
            status: TrialStatus::Running,
            final_objective: None,
            seed,
            epochs: 0,
            duration_ms: None,
            error: None,
        });
        self.append(id, false)?;
        Ok(id)
    }

    fn running_mut(&mut self, id: usize) -> Result<&mut TrialRecord> {
        let t = self
            .trials
            .get_mut(id)
            .ok_or_else(|| Error::state(format!("no trial {id}")))?;
        if t.status != TrialStatus::Running {
            return Err(Error::state(format!(
                "trial {id} is {:?}, not running",
                t.status
            )));
        }
        Ok(t)
    }

    /// Records the validation loss a running trial reached at a rung epoch.
    pub fn report_rung(&mut self, id: usize, epoch: usize, loss: f64) -> Result<()> {
        let t = self.running_mut(id)?;
        if t.rungs.last().is_some_and(|r| r.epoch >= epoch) {
            return Err(Error::state(format!(
                "trial {id}: rung epochs must increase"
            )));
        }
        t.rungs.push(RungLoss { epoch, loss });
        t.epochs = t.epochs.max(epoch);
        self.append(id, false)
    }

    /// Applies a terminal transition; only running trials may transition.
    pub fn record_result(&mut self, id: usize, update: TrialUpdate) -> Result<&TrialRecord> {
        let t = self.running_mut(id)?;
        match update {
            TrialUpdate::Complete {
                objective,
                epochs,
                duration_ms,
            } => {
                t.status = TrialStatus::Completed;
                t.final_objective = Some(objective);
                t.epochs = epochs;
                t.duration_ms = Some(duration_ms);
            }
            TrialUpdate::Prune {
                epochs,
                duration_ms,
            } => {
                t.status = TrialStatus::Pruned;
                t.epochs = epochs;
                t.duration_ms = Some(duration_ms);
            }
            TrialUpdate::Fail {
                epochs,
                duration_ms,
                reason,
            } => {
                t.status = TrialStatus::Failed;
                t.epochs = epochs;
                t.duration_ms = Some(duration_ms);
                t.error = Some(reason);
            }
        }
        self.append(id, true)?;
        Ok(&self.trials[id])
    }

    /// Completed trial with the lowest final objective, lowest id on ties.
    pub fn best_trial(&self) -> Result<&TrialRecord> {
        self.trials
            .iter()
            .filter(|t| t.status == TrialStatus::Completed)
            .filter_map(|t| t.final_objective.filter(|v| !v.is_nan()).map(|v| (v, t)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.trial_id.cmp(&b.1.trial_id)))
            .map(|(_, t)| t)
            .ok_or_else(|| Error::state(format!("task {}: no completed trial", self.task_id)))
    }

    /// `(config, objective)` pairs from completed and pruned trials.
    pub fn observations(&self) -> Vec<(HyperConfig, f64)> {
        self.trials
            .iter()
            .filter_map(|t| t.observed_objective().map(|y| (t.config, y)))
            .collect()
    }

    pub fn epochs_consumed(&self) -> usize {
        self.trials.iter().map(|t| t.epochs).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(eta: f64) -> HyperConfig {
        HyperConfig {
            eta,
            lambda: 1.0,
            m: 3,
        }
    }

    fn done(objective: f64) -> TrialUpdate {
        TrialUpdate::Complete {
            objective,
            epochs: 9,
            duration_ms: 1,
        }
    }

    #[test]
    fn transitions() {
        let mut l = TrialLedger::in_memory(2, SuccessiveHalving::new(9));
        let a = l.start_trial(cfg(0.1), 1);
        let rec = l.record_result(a, done(0.5)).unwrap();
        assert_eq!(rec.status, TrialStatus::Completed);
        assert_eq!(rec.final_objective, Some(0.5));
        let b = l.start_trial(cfg(0.2), 2);
        l.report_rung(b, 1, 0.9).unwrap();
        assert!(l.report_rung(b, 1, 0.8).is_err());
        l.record_result(
            b,
            TrialUpdate::Prune {
                epochs: 1,
                duration_ms: 1,
            },
        )
        .unwrap();
        assert!(matches!(
            l.record_result(b, done(0.1)),
            Err(Error::State(_))
        ));
        assert!(matches!(l.report_rung(b, 3, 0.1), Err(Error::State(_))));
        assert!(l.record_result(7, done(0.1)).is_err());
    }

    #[test]
    fn best_trial_argmin_and_ties() {
        let mut l = TrialLedger::in_memory(2, SuccessiveHalving::new(9));
        assert!(matches!(l.best_trial(), Err(Error::State(_))));
        for (i, v) in [0.5, 0.3, 0.9].into_iter().enumerate() {
            let id = l.start_trial(cfg(i as f64), 0);
            l.record_result(id, done(v)).unwrap();
        }
        assert_eq!(l.best_trial().unwrap().trial_id, 1);

        let mut l = TrialLedger::in_memory(2, SuccessiveHalving::new(9));
        for v in [0.4, 0.6, 0.2, 0.3, 0.9, 0.2] {
            let id = l.start_trial(cfg(v), 0);
            l.record_result(id, done(v)).unwrap();
        }
        assert_eq!(l.best_trial().unwrap().trial_id, 2);
    }

    #[test]
    fn reload_matches_live_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger").join("task_02.jsonl");
        let sh = SuccessiveHalving::new(9);
        let mut l = TrialLedger::create(&path, 2, sh).unwrap();
        let a = l.start_trial(cfg(0.07), 11);
        l.report_rung(a, 1, 1.25).unwrap();
        l.report_rung(a, 3, 0.1 + 0.2).unwrap();
        l.record_result(
            a,
            TrialUpdate::Complete {
                objective: 1.0 / 3.0,
                epochs: 9,
                duration_ms: 42,
            },
        )
        .unwrap();
        let b = l.start_trial(cfg(0.09), 12);
        l.report_rung(b, 1, 2.5).unwrap();
        l.record_result(
            b,
            TrialUpdate::Prune {
                epochs: 1,
                duration_ms: 5,
            },
        )
        .unwrap();
        let c = l.start_trial(cfg(0.05), 13);
        l.report_rung(c, 1, 0.7).unwrap();

        let reloaded = TrialLedger::load(&path, sh).unwrap();
        assert_eq!(reloaded.trials(), l.trials());
        assert_eq!(reloaded.task_id(), 2);

        let mut reloaded = reloaded;
        reloaded
            .record_result(
                c,
                TrialUpdate::Fail {
                    epochs: 1,
                    duration_ms: 1,
                    reason: "nan".into(),
                },
            )
            .unwrap();
        let again = TrialLedger::load(&path, sh).unwrap();
        assert_eq!(again.trial(c).unwrap().status, TrialStatus::Failed);
        assert_eq!(again.observations().len(), 2);
    }
}
