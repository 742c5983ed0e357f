//! Adaptive class-incremental learning.
//!
//! A sequence of tasks with disjoint label sets is learned one task at a
//! time. For every task after the first, a tree-structured Parzen estimator
//! proposes learning rate, regularization strength and exemplars per class;
//! each proposal trains a copy of the previous model under successive-halving
//! pruning and is scored by cross-entropy on a class-balanced validation pool
//! covering every class seen so far. The best trial's model is kept.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hpo;
pub mod learner;
pub mod memory;
pub mod metrics;
pub mod orchestrator;
pub mod report;
pub mod seed;
pub mod strategies;
pub mod taskstream;

pub use error::{Error, Result};
pub use hpo::{HyperConfig, SearchSpace, TrialLedger, TrialRecord};
pub use learner::ModelState;
pub use memory::{ExemplarMemory, Selector};
pub use metrics::{acc, bwt, AccuracyMatrix};
pub use orchestrator::{ExperimentConfig, Mode, SeedRun, TaskOutcome};
pub use report::ResultsBundle;
pub use strategies::Strategy;
pub use taskstream::{Example, StreamSpec, TaskDataset, ValidationPool};
