use serde::{Deserialize, Serialize};

use super::ledger::TrialLedger;

/// Asynchronous successive-halving schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessiveHalving {
    pub min_resource: usize,
    pub reduction_factor: usize,
    pub max_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneDecision {
    Continue,
    Prune,
}

impl SuccessiveHalving {
    pub fn new(max_epochs: usize) -> Self {
        Self {
            min_resource: 1,
            reduction_factor: 3,
            max_epochs,
        }
    }

    /// Epochs `min_resource * r^j` not exceeding `max_epochs`.
    pub fn rungs(&self) -> Vec<usize> {
        let mut out = Vec::new();
        if self.min_resource == 0 || self.reduction_factor < 2 {
            return out;
        }
        let mut e = self.min_resource;
        while e <= self.max_epochs {
            out.push(e);
            e = match e.checked_mul(self.reduction_factor) {
                Some(next) => next,
                None => break,
            };
        }
        out
    }

    pub fn is_rung(&self, epoch: usize) -> bool {
        self.rungs().contains(&epoch)
    }

    /// Continue iff `loss` ranks within the best `ceil(n / r)` of the losses
    /// recorded at this rung by other trials plus this one. Ties rank by
    /// trial id.
    pub fn decide(
        &self,
        ledger: &TrialLedger,
        trial_id: usize,
        epoch: usize,
        loss: f64,
    ) -> PruneDecision {
        if !self.is_rung(epoch) {
            return PruneDecision::Continue;
        }
        let mut entries: Vec<(f64, usize)> = ledger
            .trials()
            .iter()
            .filter(|t| t.trial_id != trial_id)
            .filter_map(|t| {
                t.rungs
                    .iter()
                    .find(|r| r.epoch == epoch)
                    .map(|r| (r.loss, t.trial_id))
            })
            .collect();
        entries.push((loss, trial_id));
        entries.sort_by(|a, b| sort_key(a.0).total_cmp(&sort_key(b.0)).then(a.1.cmp(&b.1)));
        let keep = entries.len().div_ceil(self.reduction_factor);
        let rank = entries
            .iter()
            .position(|e| e.1 == trial_id)
            .expect("own entry present");
        if rank < keep {
            PruneDecision::Continue
        } else {
            PruneDecision::Prune
        }
    }
}

// NaN losses rank last
fn sort_key(loss: f64) -> f64 {
    if loss.is_nan() {
        f64::INFINITY
    } else {
        loss
    }
}
