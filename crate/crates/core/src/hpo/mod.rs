//! Hyperparameter search: a multivariate TPE sampler, asynchronous
//! successive halving and a JSONL-backed trial ledger.

mod bench;
mod ledger;
mod pruner;
mod space;
mod tpe;

pub use bench::{bench_objective, bench_space, run_hpo_benchmark, BenchOutcome, BENCH_TARGET};
pub use ledger::{RungLoss, TrialLedger, TrialRecord, TrialStatus, TrialUpdate};
pub use pruner::{PruneDecision, SuccessiveHalving};
pub use space::{Dimension, DimensionKind, HyperConfig, ParamName, SearchSpace};
pub use tpe::{sample_prior, SamplerKind, TpeSampler};
