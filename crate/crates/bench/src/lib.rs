//! Fixtures shared by the criterion benches.

use adacl_core::hpo::{bench_space, HyperConfig, SearchSpace};
use adacl_core::learner::{Activation, ModelState};
use adacl_core::seed::{rng_for, EngineRng};
use adacl_core::Example;
use rand::Rng;

pub fn rng(seed: u64) -> EngineRng {
    rng_for(seed, &[])
}

/// An MLP with `classes` head rows and a batch of random examples.
pub fn model_and_batch(
    dim: usize,
    hidden: &[usize],
    classes: usize,
    batch: usize,
) -> (ModelState, Vec<Example>) {
    let labels: Vec<usize> = (0..classes).collect();
    let model = ModelState::with_labels(dim, hidden, Activation::Relu, &labels, 1).unwrap();
    let mut r = rng(2);
    let examples = (0..batch)
        .map(|_| {
            Example::new(
                (0..dim).map(|_| r.random_range(-1.0..1.0)).collect(),
                r.random_range(0..classes),
            )
        })
        .collect();
    (model, examples)
}

/// The HPO benchmark space with `n` scored random observations.
pub fn tpe_history(n: usize) -> (SearchSpace, Vec<(HyperConfig, f64)>) {
    let space = bench_space();
    let mut r = rng(3);
    let history = (0..n)
        .map(|_| {
            let c = HyperConfig {
                eta: r.random_range(-5.0..5.0),
                lambda: 10f64.powf(r.random_range(-2.0..1.0)),
                m: r.random_range(0..=10),
            };
            (c, adacl_core::hpo::bench_objective(&c))
        })
        .collect();
    (space, history)
}

/// `n` unit-norm feature vectors of dimension `dim`.
pub fn features(n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut r = rng(4);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}
