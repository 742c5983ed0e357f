//! Accuracy-matrix bookkeeping and the final-accuracy / backward-transfer
//! summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular matrix of test accuracies in percent: `row(t)[i]` is the
/// accuracy on task `i + 1` after learning task `t + 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a matrix from explicit rows, checking shape and range.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Appends the row measured after the next task.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let t = self.rows.len() + 1;
        if row.len() != t {
            return Err(Error::validation(format!(
                "accuracy row {t} has {} entries, expected {t}",
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(Error::validation(format!("accuracy {v} outside [0, 100]")));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Number of tasks learned.
    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.rows.get(t).and_then(|r| r.get(i)).copied()
    }

    /// Mean accuracy over seen tasks after each task.
    pub fn seen_task_means(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    }
}

/// Mean of the final row.
pub fn acc(a: &AccuracyMatrix) -> Result<f64> {
    let last = a
        .rows
        .last()
        .ok_or_else(|| Error::UndefinedMetric("ACC needs at least one task".into()))?;
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// Mean change from each earlier task's just-learned accuracy to its final accuracy.
pub fn bwt(a: &AccuracyMatrix) -> Result<f64> {
    let t = a.tasks();
    if t < 2 {
        return Err(Error::UndefinedMetric(
            "BWT needs at least two tasks".into(),
        ));
    }
    let last = &a.rows[t - 1];
    let s: f64 = (0..t - 1).map(|i| last[i] - a.rows[i][i]).sum();
    Ok(s / (t - 1) as f64)
}

/// Mean and sample standard deviation; the deviation is absent for a
/// single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Some(Summary { mean, std, n })
}
