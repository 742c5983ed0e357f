//! Exemplar memory: per-(task, class) stored training examples under a
//! per-class cap, chosen by herding or uniformly at random.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::ModelState;
use crate::seed::{derive_seed, rng_for, tag};
use crate::taskstream::{Example, TaskDataset};

/// Largest number of exemplars kept for a single class.
pub const DEFAULT_PER_CLASS_CAP: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    #[default]
    Herding,
    Random,
}

/// Greedy herding. At each step picks the unused index whose addition keeps
/// the running mean of the selection closest to the mean of all `features`.
/// Ties go to the lowest index.
pub fn herding_select(features: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(Error::config(format!(
            "herding needs 1 <= k <= {n}, got k = {k}"
        )));
    }
    let d = features[0].len();
    let mut mu = vec![0.0; d];
    for f in features {
        for (m, v) in mu.iter_mut().zip(f) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);

    let mut running = vec![0.0; d];
    let mut used = vec![false; n];
    let mut picks = Vec::with_capacity(k);
    for step in 1..=k {
        let mut best: Option<(usize, f64)> = None;
        for (i, f) in features.iter().enumerate() {
            if used[i] {
                continue;
            }
            let dist: f64 = mu
                .iter()
                .zip(&running)
                .zip(f)
                .map(|((m, s), x)| {
                    let diff = m - (s + x) / step as f64;
                    diff * diff
                })
                .sum();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        let (i, _) = best.expect("k <= n leaves a candidate");
        used[i] = true;
        running
            .iter_mut()
            .zip(&features[i])
            .for_each(|(s, x)| *s += x);
        picks.push(i);
    }
    Ok(picks)
}

/// `k` distinct indices from `0..n`, uniformly at random. The result is the
/// first `k` entries of a seeded shuffle, so for one seed smaller selections
/// are prefixes of larger ones.
pub fn random_select(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::config(format!(
            "random selection needs 1 <= k <= {n}, got k = {k}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &[tag("random-select")]));
    idx.truncate(k);
    Ok(idx)
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Exemplars chosen for one task, not yet committed to a memory.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskExemplars {
    pub task_id: usize,
    pub per_class: usize,
    pub selector: Selector,
    pub classes: BTreeMap<usize, Vec<Example>>,
}

/// Picks `m` exemplars per class of `task` using penultimate features of
/// `model` (L2-normalized) for herding, or a seeded shuffle for random.
pub fn select_exemplars(
    task: &TaskDataset,
    model: &ModelState,
    m: usize,
    selector: Selector,
    seed: u64,
) -> Result<TaskExemplars> {
    let mut classes = BTreeMap::new();
    if m > 0 {
        for &label in &task.class_set {
            let members: Vec<&Example> = task.class_examples(label).collect();
            if m > members.len() {
                return Err(Error::config(format!(
                    "class {label} has {} training examples, cannot store {m}",
                    members.len()
                )));
            }
            let picks = match selector {
                Selector::Herding => {
                    let rows: Vec<&[f64]> = members.iter().map(|e| e.features.as_slice()).collect();
                    let feats: Vec<Vec<f64>> = model
                        .features(&rows)?
                        .iter()
                        .map(|f| normalized(f))
                        .collect();
                    herding_select(&feats, m)?
                }
                Selector::Random => random_select(
                    members.len(),
                    m,
                    derive_seed(seed, &[task.task_id as u64, label as u64]),
                )?,
            };
            classes.insert(
                label,
                picks.into_iter().map(|i| members[i].clone()).collect(),
            );
        }
    }
    Ok(TaskExemplars {
        task_id: task.task_id,
        per_class: m,
        selector,
        classes,
    })
}

/// One line of the persisted memory manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub task_id: usize,
    pub class: usize,
    pub count: usize,
    pub selector: Selector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarMemory {
    pub per_class_cap: usize,
    tasks: BTreeMap<usize, TaskExemplars>,
}

impl Default for ExemplarMemory {
    fn default() -> Self {
        Self::new(DEFAULT_PER_CLASS_CAP)
    }
}

impl ExemplarMemory {
    pub fn new(per_class_cap: usize) -> Self {
        Self {
            per_class_cap,
            tasks: BTreeMap::new(),
        }
    }

    /// Stores (or replaces) the exemplars of one task.
    pub fn commit(&mut self, exemplars: TaskExemplars) -> Result<()> {
        if exemplars.per_class > self.per_class_cap {
            return Err(Error::config(format!(
                "{} exemplars per class exceeds the cap of {}",
                exemplars.per_class, self.per_class_cap
            )));
        }
        if exemplars
            .classes
            .values()
            .any(|v| v.len() > self.per_class_cap)
        {
            return Err(Error::config("exemplar list exceeds the per-class cap"));
        }
        for (other_id, other) in &self.tasks {
            if *other_id != exemplars.task_id
                && other
                    .classes
                    .keys()
                    .any(|c| exemplars.classes.contains_key(c))
            {
                return Err(Error::validation(format!(
                    "task {} stores classes already owned by task {other_id}",
                    exemplars.task_id
                )));
            }
        }
        self.tasks.insert(exemplars.task_id, exemplars);
        Ok(())
    }

    /// Selects `m` exemplars per class of `task` and commits them. Entries of
    /// other tasks are untouched; repeating the call with the same inputs
    /// leaves the memory unchanged.
    pub fn update(
        &mut self,
        task: &TaskDataset,
        model: &ModelState,
        m: usize,
        selector: Selector,
        seed: u64,
    ) -> Result<()> {
        if m > self.per_class_cap {
            return Err(Error::config(format!(
                "{m} exemplars per class exceeds the cap of {}",
                self.per_class_cap
            )));
        }
        let picked = select_exemplars(task, model, m, selector, seed)?;
        self.commit(picked)
    }

    pub fn task(&self, task_id: usize) -> Option<&TaskExemplars> {
        self.tasks.get(&task_id)
    }

    /// Exemplars per class chosen for each committed task.
    pub fn task_sizes(&self) -> BTreeMap<usize, usize> {
        self.tasks.iter().map(|(&t, e)| (t, e.per_class)).collect()
    }

    pub fn total(&self) -> usize {
        self.tasks
            .values()
            .flat_map(|t| t.classes.values())
            .map(Vec::len)
            .sum()
    }

    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.tasks
            .values()
            .flat_map(|t| t.classes.values())
            .flatten()
    }

    pub fn by_class(&self) -> BTreeMap<usize, Vec<&Example>> {
        let mut out: BTreeMap<usize, Vec<&Example>> = BTreeMap::new();
        for t in self.tasks.values() {
            for (&c, ex) in &t.classes {
                out.entry(c).or_default().extend(ex.iter());
            }
        }
        out
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.tasks
            .values()
            .flat_map(|t| {
                t.classes.iter().map(move |(&class, ex)| ManifestEntry {
                    task_id: t.task_id,
                    class,
                    count: ex.len(),
                    selector: t.selector,
                })
            })
            .collect()
    }
}

/// Number of stored exemplars.
pub fn memory_total(memory: &ExemplarMemory) -> usize {
    memory.total()
}
