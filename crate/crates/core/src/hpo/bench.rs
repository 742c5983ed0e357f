use serde::Serialize;

use super::space::{Dimension, HyperConfig, ParamName, SearchSpace};
use super::tpe::{SamplerKind, TpeSampler};
use crate::seed::{rng_for, tag};

/// Minimizer of [`bench_objective`].
pub const BENCH_TARGET: HyperConfig = HyperConfig {
    eta: 1.5,
    lambda: 1.0,
    m: 7,
};

/// Uniform, log-uniform and integer dimensions.
pub fn bench_space() -> SearchSpace {
    SearchSpace {
        dims: vec![
            Dimension::uniform(ParamName::Eta, -5.0, 5.0),
            Dimension::log_uniform(ParamName::Lambda, 0.01, 10.0),
            Dimension::integer(ParamName::M, 0, 10),
        ],
    }
}

/// Separable quadratic around [`BENCH_TARGET`].
pub fn bench_objective(c: &HyperConfig) -> f64 {
    (c.eta - BENCH_TARGET.eta).powi(2)
        + (c.lambda - BENCH_TARGET.lambda).powi(2)
        + (c.m as f64 - BENCH_TARGET.m as f64).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchOutcome {
    pub seed: u64,
    pub tpe_best: f64,
    pub random_best: f64,
}

impl BenchOutcome {
    pub fn tpe_wins(&self) -> bool {
        self.tpe_best <= self.random_best
    }
}

fn best_of(kind: SamplerKind, seed: u64, trials: usize) -> f64 {
    let space = bench_space();
    let mut rng = rng_for(seed, &[tag("hpo-bench")]);
    let mut history: Vec<(HyperConfig, f64)> = Vec::with_capacity(trials);
    for _ in 0..trials {
        let c = kind.suggest(
            &TpeSampler::default(),
            &space,
            &history,
            &BENCH_TARGET,
            &mut rng,
        );
        history.push((c, bench_objective(&c)));
    }
    history.iter().map(|h| h.1).fold(f64::INFINITY, f64::min)
}

/// Paired comparison: both samplers start from the same RNG stream per seed.
pub fn run_hpo_benchmark(seeds: &[u64], trials: usize) -> Vec<BenchOutcome> {
    seeds
        .iter()
        .map(|&seed| BenchOutcome {
            seed,
            tpe_best: best_of(SamplerKind::Tpe, seed, trials),
            random_best: best_of(SamplerKind::Random, seed, trials),
        })
        .collect()
}
