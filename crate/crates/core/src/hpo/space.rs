use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three tunable hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamName {
    /// Learning rate.
    Eta,
    /// Regularization strength.
    Lambda,
    /// Exemplars stored per class.
    M,
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamName::Eta => "eta",
            ParamName::Lambda => "lambda",
            ParamName::M => "m",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DimensionKind {
    Uniform,
    LogUniform,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: ParamName,
    pub kind: DimensionKind,
    pub low: f64,
    pub high: f64,
}

impl Dimension {
    pub fn uniform(name: ParamName, low: f64, high: f64) -> Self {
        Self {
            name,
            kind: DimensionKind::Uniform,
            low,
            high,
        }
    }

    pub fn log_uniform(name: ParamName, low: f64, high: f64) -> Self {
        Self {
            name,
            kind: DimensionKind::LogUniform,
            low,
            high,
        }
    }

    pub fn integer(name: ParamName, low: i64, high: i64) -> Self {
        Self {
            name,
            kind: DimensionKind::Integer,
            low: low as f64,
            high: high as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.low < self.high) || !self.low.is_finite() || !self.high.is_finite() {
            return Err(Error::config(format!(
                "dimension {} needs low < high",
                self.name
            )));
        }
        match self.kind {
            DimensionKind::LogUniform if self.low <= 0.0 => Err(Error::config(format!(
                "log-uniform dimension {} needs a positive lower bound",
                self.name
            ))),
            DimensionKind::Integer if self.low.fract() != 0.0 || self.high.fract() != 0.0 => {
                Err(Error::config(format!(
                    "integer dimension {} needs integer bounds",
                    self.name
                )))
            }
            _ => Ok(()),
        }
    }

    /// Bounds of the space kernels live in: log scale for log-uniform,
    /// half-integer padded for integers.
    pub(crate) fn internal_bounds(&self) -> (f64, f64) {
        match self.kind {
            DimensionKind::Uniform => (self.low, self.high),
            DimensionKind::LogUniform => (self.low.ln(), self.high.ln()),
            DimensionKind::Integer => (self.low - 0.5, self.high + 0.5),
        }
    }

    pub(crate) fn to_internal(&self, value: f64) -> f64 {
        match self.kind {
            DimensionKind::LogUniform => value.ln(),
            _ => value,
        }
    }

    /// Maps a kernel-space value back into bounds.
    pub(crate) fn to_external(&self, x: f64) -> f64 {
        match self.kind {
            DimensionKind::Uniform => x.clamp(self.low, self.high),
            DimensionKind::LogUniform => x.exp().clamp(self.low, self.high),
            DimensionKind::Integer => x.round().clamp(self.low, self.high),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high && (self.kind != DimensionKind::Integer || v.fract() == 0.0)
    }

    /// A draw from the prior: uniform, uniform in log space, or uniform over
    /// the integers in range.
    pub fn sample_prior(&self, rng: &mut impl Rng) -> f64 {
        match self.kind {
            DimensionKind::Uniform => self.to_external(rng.random_range(self.low..self.high)),
            DimensionKind::LogUniform => {
                self.to_external(rng.random_range(self.low.ln()..self.high.ln()))
            }
            DimensionKind::Integer => rng.random_range(self.low as i64..=self.high as i64) as f64,
        }
    }
}

/// Ordered, uniquely named dimensions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        let space = Self { dims };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.dims.iter().enumerate() {
            d.validate()?;
            if self.dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::config(format!("dimension {} appears twice", d.name)));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: ParamName) -> Option<&Dimension> {
        self.dims.iter().find(|d| d.name == name)
    }

    pub fn contains(&self, config: &HyperConfig) -> bool {
        self.dims.iter().all(|d| d.contains(config.get(d.name)))
    }
}

/// One assignment of learning rate, regularization strength and exemplars per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub eta: f64,
    pub lambda: f64,
    pub m: usize,
}

impl HyperConfig {
    pub fn get(&self, name: ParamName) -> f64 {
        match name {
            ParamName::Eta => self.eta,
            ParamName::Lambda => self.lambda,
            ParamName::M => self.m as f64,
        }
    }

    pub fn set(&mut self, name: ParamName, value: f64) {
        match name {
            ParamName::Eta => self.eta = value,
            ParamName::Lambda => self.lambda = value,
            ParamName::M => self.m = value.round().max(0.0) as usize,
        }
    }
}
