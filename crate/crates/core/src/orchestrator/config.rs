use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpo::{
    Dimension, DimensionKind, HyperConfig, ParamName, SearchSpace, SuccessiveHalving, TpeSampler,
};
use crate::learner::Activation;
use crate::memory::{Selector, DEFAULT_PER_CLASS_CAP};
use crate::strategies::Strategy;
use crate::taskstream::StreamSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Adaptive,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaSchedule {
    /// `lambda` on every task.
    #[default]
    Constant,
    /// `lambda * t / (t + 1)` with `t` the number of tasks already learned.
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemorySchedule {
    /// `m` exemplars per class for every task.
    #[default]
    Constant,
    /// `floor(memory_budget / t)` exemplars per class for task `t`.
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluationMode {
    /// Nearest-mean-of-exemplars for icarl, softmax otherwise.
    #[default]
    Auto,
    Softmax,
    Nme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneFlags {
    #[serde(default)]
    pub eta: bool,
    #[serde(default)]
    pub lambda: bool,
    #[serde(default)]
    pub m: bool,
}

impl TuneFlags {
    pub const ALL: TuneFlags = TuneFlags {
        eta: true,
        lambda: true,
        m: true,
    };

    pub fn any(&self) -> bool {
        self.eta || self.lambda || self.m
    }

    pub fn is_tuned(&self, name: ParamName) -> bool {
        match name {
            ParamName::Eta => self.eta,
            ParamName::Lambda => self.lambda,
            ParamName::M => self.m,
        }
    }

    /// The seven non-empty subsets.
    pub fn non_empty_subsets() -> Vec<TuneFlags> {
        (1u8..8)
            .map(|b| TuneFlags {
                eta: b & 1 != 0,
                lambda: b & 2 != 0,
                m: b & 4 != 0,
            })
            .collect()
    }
}

/// Values used for dimensions that are not searched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedValues {
    pub eta: Option<f64>,
    pub lambda: Option<f64>,
    #[serde(default)]
    pub lambda_schedule: LambdaSchedule,
    pub m: Option<usize>,
    #[serde(default)]
    pub m_schedule: MemorySchedule,
    /// Per-class budget divided by the task index under the decreasing schedule.
    pub memory_budget: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionSpec {
    pub kind: DimensionKind,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spaces {
    pub eta: Option<DimensionSpec>,
    pub lambda: Option<DimensionSpec>,
    pub m: Option<DimensionSpec>,
}

impl Spaces {
    pub fn get(&self, name: ParamName) -> Option<&DimensionSpec> {
        match name {
            ParamName::Eta => self.eta.as_ref(),
            ParamName::Lambda => self.lambda.as_ref(),
            ParamName::M => self.m.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum StreamSource {
    Generate(StreamSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            activation: Activation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay_first: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub fisher_samples: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            momentum: 0.9,
            weight_decay_first: 5e-4,
            weight_decay: 2e-4,
            temperature: 2.0,
            fisher_samples: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub configs: usize,
    pub min_resource: usize,
    pub reduction_factor: usize,
    pub n_startup: usize,
    pub n_candidates: usize,
    pub gamma: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let tpe = TpeSampler::default();
        Self {
            configs: 25,
            min_resource: 1,
            reduction_factor: 3,
            n_startup: tpe.n_startup,
            n_candidates: tpe.n_candidates,
            gamma: tpe.gamma,
        }
    }
}

impl SearchConfig {
    pub fn sampler(&self) -> TpeSampler {
        TpeSampler {
            n_startup: self.n_startup,
            n_candidates: self.n_candidates,
            gamma: self.gamma,
            ..TpeSampler::default()
        }
    }
}

/// One experiment: a strategy, how its hyperparameters are chosen, the data
/// stream and the training budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub strategy: Strategy,
    pub mode: Mode,
    #[serde(default)]
    pub tune: TuneFlags,
    #[serde(default)]
    pub fixed: FixedValues,
    #[serde(default)]
    pub spaces: Spaces,
    #[serde(default)]
    pub selector: Selector,
    pub stream: StreamSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default = "default_validation")]
    pub validation_per_class: usize,
    #[serde(default = "default_test")]
    pub test_per_class: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub evaluation: EvaluationMode,
    #[serde(default = "default_cap")]
    pub memory_cap: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub retrain_best: bool,
}

fn default_validation() -> usize {
    10
}
fn default_test() -> usize {
    20
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_cap() -> usize {
    DEFAULT_PER_CLASS_CAP
}
fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    /// A config with library defaults for everything but the essentials.
    pub fn new(strategy: Strategy, mode: Mode, stream: StreamSource) -> Self {
        Self {
            name: None,
            strategy,
            mode,
            tune: TuneFlags::default(),
            fixed: FixedValues::default(),
            spaces: Spaces::default(),
            selector: Selector::default(),
            stream,
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            search: SearchConfig::default(),
            validation_per_class: default_validation(),
            test_per_class: default_test(),
            seeds: default_seeds(),
            evaluation: EvaluationMode::default(),
            memory_cap: default_cap(),
            workers: default_workers(),
            retrain_best: false,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("invalid experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a JSON config. A relative stream file path is
    /// resolved against the config's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if let StreamSource::File(f) = &mut cfg.stream {
            if f.is_relative() {
                if let Some(dir) = path.parent() {
                    *f = dir.join(&*f);
                }
            }
        }
        Ok(cfg)
    }

    /// Dimensions searched by TPE, in eta, lambda, m order.
    pub fn tuned_space(&self) -> Result<SearchSpace> {
        if self.mode == Mode::Fixed {
            return Ok(SearchSpace::default());
        }
        let mut dims = Vec::new();
        for name in [ParamName::Eta, ParamName::Lambda, ParamName::M] {
            if self.tune.is_tuned(name) {
                let spec = self.spaces.get(name).ok_or_else(|| {
                    Error::config(format!("{name} is tuned but has no search space"))
                })?;
                dims.push(Dimension {
                    name,
                    kind: spec.kind,
                    low: spec.low,
                    high: spec.high,
                });
            }
        }
        SearchSpace::new(dims)
    }

    pub fn uses_memory(&self) -> bool {
        self.strategy.requires_memory()
            || (self.mode == Mode::Adaptive && self.tune.m)
            || self.fixed.m.unwrap_or(0) > 0
            || self.fixed.m_schedule == MemorySchedule::Decreasing
    }

    /// Whether NME replaces softmax at evaluation time.
    pub fn uses_nme(&self) -> bool {
        match self.evaluation {
            EvaluationMode::Auto => self.strategy == Strategy::Icarl,
            EvaluationMode::Softmax => false,
            EvaluationMode::Nme => true,
        }
    }

    pub fn schedule(&self) -> SuccessiveHalving {
        SuccessiveHalving {
            min_resource: self.search.min_resource,
            reduction_factor: self.search.reduction_factor,
            max_epochs: self.training.epochs,
        }
    }

    fn tuned(&self, name: ParamName) -> bool {
        self.mode == Mode::Adaptive && self.tune.is_tuned(name)
    }

    /// Learning rate for the first task: the fixed value, else the midpoint
    /// of the search range.
    pub fn first_task_eta(&self) -> Result<f64> {
        if self.tuned(ParamName::Eta) {
            let s = self
                .spaces
                .eta
                .as_ref()
                .ok_or_else(|| Error::config("eta is tuned but has no search space"))?;
            return Ok(match s.kind {
                DimensionKind::LogUniform => (s.low * s.high).sqrt(),
                _ => 0.5 * (s.low + s.high),
            });
        }
        self.fixed
            .eta
            .ok_or_else(|| Error::config("fixed.eta is required when eta is not tuned"))
    }

    /// Fixed or scheduled values for task `task_id`; tuned dimensions get
    /// placeholders that the sampler overwrites.
    pub fn base_config(&self, task_id: usize) -> Result<HyperConfig> {
        let eta = if self.tuned(ParamName::Eta) {
            self.first_task_eta()?
        } else {
            self.fixed
                .eta
                .ok_or_else(|| Error::config("fixed.eta is required when eta is not tuned"))?
        };
        let lambda = if self.tuned(ParamName::Lambda) || task_id < 2 {
            0.0
        } else {
            let base = match (self.fixed.lambda, self.fixed.lambda_schedule) {
                (Some(v), _) => v,
                (None, LambdaSchedule::Incremental) => 1.0,
                (None, LambdaSchedule::Constant) if self.strategy == Strategy::None => 0.0,
                (None, LambdaSchedule::Constant) => {
                    return Err(Error::config(
                        "fixed.lambda is required when lambda is not tuned",
                    ))
                }
            };
            match self.fixed.lambda_schedule {
                LambdaSchedule::Constant => base,
                LambdaSchedule::Incremental => base * super::lambda_schedule(task_id - 1),
            }
        };
        let m = if self.tuned(ParamName::M) {
            0
        } else {
            match self.fixed.m_schedule {
                MemorySchedule::Constant => self.fixed.m.unwrap_or(0),
                MemorySchedule::Decreasing => {
                    let budget = self.fixed.memory_budget.ok_or_else(|| {
                        Error::config(
                            "fixed.memory_budget is required by the decreasing m schedule",
                        )
                    })?;
                    super::memory_schedule(budget, task_id)
                }
            }
        };
        Ok(HyperConfig { eta, lambda, m })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::config(msg.to_string()));
        if self.mode == Mode::Adaptive && !self.tune.any() {
            return fail("adaptive mode needs at least one tuned dimension");
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty");
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 {
            return fail("epochs and batch_size must be positive");
        }
        if !(self.training.temperature > 0.0) {
            return fail("temperature must be positive");
        }
        if self.search.configs == 0 || self.workers == 0 {
            return fail("configs and workers must be positive");
        }
        if self.search.min_resource == 0 || self.search.reduction_factor < 2 {
            return fail("successive halving needs min_resource >= 1 and reduction_factor >= 2");
        }
        if !(self.search.gamma > 0.0 && self.search.gamma < 1.0) || self.search.n_candidates == 0 {
            return fail("gamma must lie in (0, 1) and n_candidates must be positive");
        }
        if self.validation_per_class == 0 || self.test_per_class == 0 {
            return fail("validation_per_class and test_per_class must be positive");
        }
        if self.memory_cap > DEFAULT_PER_CLASS_CAP {
            return Err(Error::config(format!(
                "memory_cap may not exceed {DEFAULT_PER_CLASS_CAP}"
            )));
        }
        if self.model.hidden.contains(&0) {
            return fail("hidden layer sizes must be positive");
        }
        if let StreamSource::Generate(spec) = &self.stream {
            spec.validate()?;
        }
        let space = self.tuned_space()?;
        if let Some(d) = space.get(ParamName::Eta) {
            if d.low <= 0.0 {
                return fail("eta search space must be positive");
            }
        }
        if let Some(d) = space.get(ParamName::Lambda) {
            if d.low < 0.0 {
                return fail("lambda search space must be non-negative");
            }
        }
        if let Some(d) = space.get(ParamName::M) {
            if d.kind != DimensionKind::Integer {
                return fail("m search space must be an integer range");
            }
            if d.low < 1.0 || d.high > self.memory_cap as f64 {
                return Err(Error::config(format!(
                    "m search space must lie in [1, {}]",
                    self.memory_cap
                )));
            }
        }
        for t in 1..=self.max_tasks_hint() {
            let base = self.base_config(t)?;
            if !(base.eta > 0.0) || !base.eta.is_finite() {
                return fail("learning rate must be positive");
            }
            if !(base.lambda >= 0.0) {
                return fail("lambda must be non-negative");
            }
            if base.m > self.memory_cap {
                return Err(Error::config(format!(
                    "{} exemplars per class exceeds the cap of {}",
                    base.m, self.memory_cap
                )));
            }
            if self.strategy.requires_memory() && !self.tuned(ParamName::M) && base.m == 0 {
                return Err(Error::config(format!(
                    "strategy {} needs m >= 1",
                    self.strategy
                )));
            }
        }
        Ok(())
    }

    fn max_tasks_hint(&self) -> usize {
        match &self.stream {
            StreamSource::Generate(spec) => spec.num_tasks,
            StreamSource::File(_) => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream() -> StreamSource {
        StreamSource::Generate(StreamSpec::uniform_blobs(3, 2, 40, 4, 6.0, 1.0, 1))
    }

    fn adaptive() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(Strategy::Lwf, Mode::Adaptive, stream());
        c.tune = TuneFlags {
            eta: true,
            lambda: true,
            m: false,
        };
        c.spaces.eta = Some(DimensionSpec {
            kind: DimensionKind::Uniform,
            low: 0.05,
            high: 0.1,
        });
        c.spaces.lambda = Some(DimensionSpec {
            kind: DimensionKind::LogUniform,
            low: 0.1,
            high: 10.0,
        });
        c
    }

    #[test]
    fn adaptive_without_flags_is_rejected() {
        let mut c = adaptive();
        c.tune = TuneFlags::default();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(adaptive().validate().is_ok());
    }

    #[test]
    fn tuned_dimension_needs_space() {
        let mut c = adaptive();
        c.spaces.lambda = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn first_task_uses_midpoint() {
        let c = adaptive();
        assert!((c.first_task_eta().unwrap() - 0.075).abs() < 1e-15);
    }

    #[test]
    fn icarl_needs_memory() {
        let mut c = ExperimentConfig::new(Strategy::Icarl, Mode::Fixed, stream());
        c.fixed.eta = Some(0.05);
        c.fixed.lambda = Some(1.0);
        assert!(c.validate().is_err());
        c.fixed.m = Some(5);
        assert!(c.validate().is_ok());
        c.fixed.m = Some(51);
        assert!(c.validate().is_err());
    }

    #[test]
    fn schedules_feed_base_config() {
        let mut c = ExperimentConfig::new(Strategy::Lwf, Mode::Fixed, stream());
        c.fixed.eta = Some(0.05);
        c.fixed.lambda_schedule = LambdaSchedule::Incremental;
        c.fixed.m_schedule = MemorySchedule::Decreasing;
        c.fixed.memory_budget = Some(20);
        c.validate().unwrap();
        assert_eq!(c.base_config(2).unwrap().lambda, 0.5);
        assert_eq!(c.base_config(3).unwrap().lambda, 2.0 / 3.0);
        assert_eq!(c.base_config(3).unwrap().m, 6);
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let c = adaptive();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&text).unwrap(), c);
        let bad = text.replacen("\"strategy\"", "\"stratgey\"", 1);
        assert!(ExperimentConfig::from_json_str(&bad).is_err());
    }
}
