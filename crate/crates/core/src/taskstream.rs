//! Class-incremental task streams and the accumulated validation pool.
//!
//! A stream is a list of [`TaskDataset`]s whose label sets are pairwise
//! disjoint. Streams are either synthesized ([`generate_stream`]) or read from
//! a CSV file with header `task_id,label,f_1,...,f_d`.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, tag};

/// One labelled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }

    /// Identity of an example by content, used to prove that held-out data
    /// never leaks into training sets or memory.
    pub fn content_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.label.hash(&mut h);
        for f in &self.features {
            f.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// The examples of one task together with the labels they cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_id: usize,
    pub examples: Vec<Example>,
    pub class_set: BTreeSet<usize>,
}

impl TaskDataset {
    /// Builds a dataset, deriving `class_set` from the examples and checking
    /// that all feature vectors share one dimension.
    pub fn new(task_id: usize, examples: Vec<Example>) -> Result<Self> {
        if let Some(first) = examples.first() {
            let d = first.features.len();
            if let Some(bad) = examples.iter().find(|e| e.features.len() != d) {
                return Err(Error::shape(format!(
                    "task {task_id}: feature dimension {} differs from {d}",
                    bad.features.len()
                )));
            }
        }
        let class_set = examples.iter().map(|e| e.label).collect();
        Ok(Self {
            task_id,
            examples,
            class_set,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.features.len())
    }

    pub fn class_examples(&self, label: usize) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.label == label)
    }

    pub fn class_count(&self, label: usize) -> usize {
        self.class_examples(label).count()
    }
}

/// Synthetic generator families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Isotropic Gaussian clusters around well-separated class means.
    GaussianBlobs,
    /// Concentric noisy shells, one shell per class, around a per-task center.
    Rings,
}

/// Parameters of a synthetic stream. `inter_mean_distance[t]` and
/// `noise_scale[t]` control how hard task `t` is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub kind: GeneratorKind,
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    pub inter_mean_distance: Vec<f64>,
    pub noise_scale: Vec<f64>,
    pub seed: u64,
}

impl StreamSpec {
    /// A blob stream with the same difficulty for every task.
    pub fn uniform_blobs(
        num_tasks: usize,
        classes_per_task: usize,
        samples_per_class: usize,
        feature_dim: usize,
        distance: f64,
        noise: f64,
        seed: u64,
    ) -> Self {
        Self {
            kind: GeneratorKind::GaussianBlobs,
            num_tasks,
            classes_per_task,
            samples_per_class,
            feature_dim,
            inter_mean_distance: vec![distance; num_tasks],
            noise_scale: vec![noise; num_tasks],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 {
            return Err(Error::config("stream needs at least one task"));
        }
        if self.classes_per_task < 2 {
            return Err(Error::config("stream needs at least two classes per task"));
        }
        if self.samples_per_class == 0 || self.feature_dim == 0 {
            return Err(Error::config(
                "samples per class and feature dimension must be positive",
            ));
        }
        if self.inter_mean_distance.len() != self.num_tasks
            || self.noise_scale.len() != self.num_tasks
        {
            return Err(Error::config(format!(
                "difficulty lists must have one entry per task ({}), got {} distances and {} noise scales",
                self.num_tasks,
                self.inter_mean_distance.len(),
                self.noise_scale.len()
            )));
        }
        let bad = |v: &f64| !v.is_finite() || *v < 0.0;
        if self.inter_mean_distance.iter().any(bad) || self.noise_scale.iter().any(bad) {
            return Err(Error::config(
                "difficulty parameters must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Unit directions for every class. The first `d` are mutually orthogonal
/// (Gram-Schmidt over Gaussian draws); any beyond that are random.
fn class_directions(rng: &mut impl Rng, count: usize, d: usize) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let mut v = gaussian_vec(rng, d);
        if k < d {
            for prev in &dirs[..k] {
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot * b);
            }
        }
        normalize(&mut v);
        dirs.push(v);
    }
    dirs
}

/// Synthesizes a stream. Task `t` (1-based) owns labels
/// `(t-1)*c .. t*c`; output is a pure function of the spec.
pub fn generate_stream(spec: &StreamSpec) -> Result<Vec<TaskDataset>> {
    spec.validate()?;
    let c = spec.classes_per_task;
    let d = spec.feature_dim;
    let mut rng = rng_for(spec.seed, &[tag("stream")]);
    let dirs = class_directions(&mut rng, spec.num_tasks * c, d);

    let mut tasks = Vec::with_capacity(spec.num_tasks);
    for t in 0..spec.num_tasks {
        let dist = spec.inter_mean_distance[t];
        let noise = spec.noise_scale[t];
        let center = match spec.kind {
            GeneratorKind::GaussianBlobs => vec![0.0; d],
            GeneratorKind::Rings => gaussian_vec(&mut rng, d)
                .into_iter()
                .map(|x| x * dist * 2.0)
                .collect(),
        };
        let mut examples = Vec::with_capacity(c * spec.samples_per_class);
        for j in 0..c {
            let label = t * c + j;
            for _ in 0..spec.samples_per_class {
                let features = match spec.kind {
                    GeneratorKind::GaussianBlobs => {
                        // orthonormal directions scaled by dist/sqrt(2) sit exactly dist apart
                        let scale = dist / std::f64::consts::SQRT_2;
                        dirs[label]
                            .iter()
                            .map(|u| u * scale + noise * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    }
                    GeneratorKind::Rings => {
                        let mut u = gaussian_vec(&mut rng, d);
                        normalize(&mut u);
                        let radius = dist * (j as f64 + 1.0);
                        u.iter()
                            .zip(&center)
                            .map(|(ui, ci)| {
                                ci + ui * radius + noise * rng.sample::<f64, _>(StandardNormal)
                            })
                            .collect()
                    }
                };
                examples.push(Example::new(features, label));
            }
        }
        tasks.push(TaskDataset::new(t + 1, examples)?);
    }
    check_disjoint(&tasks)?;
    Ok(tasks)
}

/// Fails with the offending label if two tasks share a class.
pub fn check_disjoint(tasks: &[TaskDataset]) -> Result<()> {
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    for task in tasks {
        for &label in &task.class_set {
            if let Some(prev) = owner.insert(label, task.task_id) {
                return Err(Error::validation(format!(
                    "label {label} appears in task {prev} and task {}",
                    task.task_id
                )));
            }
        }
    }
    Ok(())
}

/// Reads a stream from CSV (`task_id,label,f_1,...,f_d`, row order irrelevant).
/// Tasks are returned ordered by `task_id`; examples keep file order.
pub fn load_stream_file(path: impl AsRef<Path>) -> Result<Vec<TaskDataset>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.len() < 3 || &header[0] != "task_id" || &header[1] != "label" {
        return Err(Error::Parse {
            line: 1,
            message: "expected header task_id,label,f_1,...,f_d".into(),
        });
    }
    let width = header.len();

    let mut by_task: BTreeMap<usize, Vec<Example>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let int = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line,
                message: format!("{what} `{s}` is not a non-negative integer"),
            })
        };
        let task_id = int(&record[0], "task_id")?;
        let label = int(&record[1], "label")?;
        let features = record
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("feature `{s}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        by_task
            .entry(task_id)
            .or_default()
            .push(Example::new(features, label));
    }

    let tasks = by_task
        .into_iter()
        .map(|(id, ex)| TaskDataset::new(id, ex))
        .collect::<Result<Vec<_>>>()?;
    check_disjoint(&tasks)?;
    Ok(tasks)
}

/// Writes a stream in the CSV layout read by [`load_stream_file`]. Features
/// use the shortest representation that parses back to the same `f64`.
pub fn write_stream_file(tasks: &[TaskDataset], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let d = tasks.iter().find_map(|t| t.feature_dim()).unwrap_or(0);
    let mut out = String::from("task_id,label");
    for k in 1..=d {
        out.push_str(&format!(",f_{k}"));
    }
    out.push('\n');
    for task in tasks {
        for ex in &task.examples {
            out.push_str(&format!("{},{}", task.task_id, ex.label));
            for f in &ex.features {
                out.push_str(&format!(",{f:?}"));
            }
            out.push('\n');
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Per-class held-out examples.
pub type HeldOut = BTreeMap<usize, Vec<Example>>;

/// Moves `per_class_count` randomly chosen examples of every class out of
/// `task`. Remaining training examples keep their original order.
pub fn split_validation(
    task: &TaskDataset,
    per_class_count: usize,
    seed: u64,
) -> Result<(TaskDataset, HeldOut)> {
    let mut heldout = HeldOut::new();
    if per_class_count == 0 {
        return Ok((task.clone(), heldout));
    }
    let mut taken = vec![false; task.examples.len()];
    for &label in &task.class_set {
        let mut idx: Vec<usize> = (0..task.examples.len())
            .filter(|&i| task.examples[i].label == label)
            .collect();
        if idx.len() <= per_class_count {
            return Err(Error::config(format!(
                "class {label} in task {} has {} examples, needs more than {per_class_count} to hold out",
                task.task_id,
                idx.len()
            )));
        }
        let mut rng = rng_for(seed, &[tag("holdout"), task.task_id as u64, label as u64]);
        idx.shuffle(&mut rng);
        idx.truncate(per_class_count);
        idx.sort_unstable();
        for &i in &idx {
            taken[i] = true;
        }
        heldout.insert(
            label,
            idx.iter().map(|&i| task.examples[i].clone()).collect(),
        );
    }
    let train = task
        .examples
        .iter()
        .zip(&taken)
        .filter(|(_, &t)| !t)
        .map(|(e, _)| e.clone())
        .collect();
    Ok((TaskDataset::new(task.task_id, train)?, heldout))
}

/// The accumulated class-balanced validation set over every class seen so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationPool {
    pub per_class_count: usize,
    pub classes: BTreeMap<usize, Vec<Example>>,
}

impl ValidationPool {
    pub fn new(per_class_count: usize) -> Self {
        Self {
            per_class_count,
            classes: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.classes.values().flatten()
    }

    pub fn hashes(&self) -> HashSet<u64> {
        self.examples().map(Example::content_hash).collect()
    }
}

/// Adds a new task's held-out examples to the pool.
pub fn accumulate_validation(pool: &ValidationPool, heldout: &HeldOut) -> Result<ValidationPool> {
    let mut next = pool.clone();
    for (&label, examples) in heldout {
        if next.classes.contains_key(&label) {
            return Err(Error::validation(format!(
                "class {label} is already in the validation pool"
            )));
        }
        if examples.len() != pool.per_class_count {
            return Err(Error::validation(format!(
                "class {label} contributes {} held-out examples, pool expects {}",
                examples.len(),
                pool.per_class_count
            )));
        }
        next.classes.insert(label, examples.clone());
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> StreamSpec {
        StreamSpec::uniform_blobs(2, 2, 10, 2, 10.0, 1.0, 7)
    }

    #[test]
    fn partitions_labels_per_task() {
        let s = generate_stream(&small_spec()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].class_set, BTreeSet::from([0, 1]));
        assert_eq!(s[1].class_set, BTreeSet::from([2, 3]));
        assert!(s.iter().all(|t| t.len() == 20));
        assert_eq!(s[0].task_id, 1);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = serde_json::to_vec(&generate_stream(&small_spec()).unwrap()).unwrap();
        let b = serde_json::to_vec(&generate_stream(&small_spec()).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut other = small_spec();
        other.seed = 8;
        assert_ne!(
            a,
            serde_json::to_vec(&generate_stream(&other).unwrap()).unwrap()
        );
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small_spec();
        s.classes_per_task = 0;
        assert!(matches!(generate_stream(&s), Err(Error::Config(_))));
        let mut s = small_spec();
        s.noise_scale.pop();
        assert!(matches!(generate_stream(&s), Err(Error::Config(_))));
    }

    #[test]
    fn rings_generate_disjoint_tasks() {
        let mut s = small_spec();
        s.kind = GeneratorKind::Rings;
        let tasks = generate_stream(&s).unwrap();
        check_disjoint(&tasks).unwrap();
        assert!(tasks
            .iter()
            .flat_map(|t| &t.examples)
            .all(|e| e.features.len() == 2));
    }

    #[test]
    fn split_counts_and_identity_case() {
        let task = &generate_stream(&small_spec()).unwrap()[0];
        let (train, held) = split_validation(task, 2, 3).unwrap();
        assert_eq!(train.class_count(0), 8);
        assert_eq!(train.class_count(1), 8);
        assert!(held.values().all(|v| v.len() == 2));
        let train_h: HashSet<u64> = train.examples.iter().map(Example::content_hash).collect();
        assert!(held
            .values()
            .flatten()
            .all(|e| !train_h.contains(&e.content_hash())));
        assert_eq!(train.len() + 4, task.len());

        let (same, empty) = split_validation(task, 0, 3).unwrap();
        assert_eq!(&same, task);
        assert!(empty.is_empty());
    }

    #[test]
    fn split_rejects_small_class() {
        let task = &generate_stream(&small_spec()).unwrap()[0];
        let err = split_validation(task, 10, 1).unwrap_err();
        assert!(err.to_string().contains("class 0"), "{err}");
    }

    #[test]
    fn seeds_change_heldout_sets() {
        // 45 possible 2-of-10 subsets per class; two seeds agreeing on both
        // classes has probability 1/45^2 under uniform draws
        let task = &generate_stream(&small_spec()).unwrap()[0];
        let (_, a) = split_validation(task, 2, 1).unwrap();
        let (_, b) = split_validation(task, 2, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn pool_accumulates_balanced() {
        let s = generate_stream(&small_spec()).unwrap();
        let mut pool = ValidationPool::new(2);
        for (t, task) in s.iter().enumerate() {
            let (_, held) = split_validation(task, 2, 5).unwrap();
            pool = accumulate_validation(&pool, &held).unwrap();
            assert_eq!(pool.len(), (t + 1) * 2 * 2);
            assert!(pool.classes.values().all(|v| v.len() == 2));
        }
        assert_eq!(
            pool.classes.keys().copied().collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
        let (_, held) = split_validation(&s[0], 2, 5).unwrap();
        assert!(matches!(
            accumulate_validation(&pool, &held),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn csv_parse_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(
            &p,
            "task_id,label,f_1,f_2\n1,0,0.5,1\n1,1,2,3\n2,2,1,1\n2,3,0,-1\n",
        )
        .unwrap();
        let s = load_stream_file(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|t| t.len() == 2));

        std::fs::write(&p, "task_id,label,f_1\n1,3,0.5\n1,0,1\n2,3,2\n").unwrap();
        let err = load_stream_file(&p).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("label 3"));

        std::fs::write(&p, "task_id,label,f_1,f_2\n1,0,0.5,1\n1,1,2\n").unwrap();
        match load_stream_file(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }

        assert!(matches!(
            load_stream_file(dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = generate_stream(&StreamSpec::uniform_blobs(3, 2, 5, 4, 3.0, 0.7, 11)).unwrap();
        write_stream_file(&s, &p).unwrap();
        assert_eq!(load_stream_file(&p).unwrap(), s);
    }
}
