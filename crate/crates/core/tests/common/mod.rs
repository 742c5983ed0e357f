#![allow(dead_code)]

use adacl_core::hpo::DimensionKind;
use adacl_core::learner::{Activation, ModelState};
use adacl_core::orchestrator::{DimensionSpec, ExperimentConfig, Mode, StreamSource, TuneFlags};
use adacl_core::seed::EngineRng;
use adacl_core::strategies::{estimate_fisher, Strategy, TeacherSnapshot};
use adacl_core::taskstream::{Example, StreamSpec};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// A random network, its snapshot and a batch that exercises `strategy`.
pub struct GradCase {
    pub model: ModelState,
    pub teacher: Option<TeacherSnapshot>,
    pub batch: Vec<Example>,
    pub strategy: Strategy,
    pub lambda: f64,
    pub temperature: f64,
}

pub fn random_grad_case(rng: &mut EngineRng) -> GradCase {
    let d = rng.random_range(1..=5);
    let hidden: Vec<usize> = (0..rng.random_range(0..=2))
        .map(|_| rng.random_range(1..=6))
        .collect();
    let activation = if rng.random_bool(0.5) {
        Activation::Relu
    } else {
        Activation::Tanh
    };
    let old = rng.random_range(1..=3);
    let new = rng.random_range(1..=3);
    let strategy = Strategy::ALL[rng.random_range(0..Strategy::ALL.len())];
    let old_labels: Vec<usize> = (0..old).collect();
    let new_labels: Vec<usize> = (old..old + new).collect();
    let seed = rng.random();

    let feature = |rng: &mut EngineRng| -> Vec<f64> {
        (0..d)
            .map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect()
    };
    let teacher_model = ModelState::with_labels(d, &hidden, activation, &old_labels, seed).unwrap();
    let mut model = teacher_model.clone();
    for layer in model.layers.iter_mut() {
        for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *v += 0.3 * Distribution::<f64>::sample(&StandardNormal, rng);
        }
    }
    model.expand_head(&new_labels).unwrap();

    let n = rng.random_range(1..=8);
    let total = old + new;
    let batch: Vec<Example> = (0..n)
        .map(|_| Example::new(feature(rng), rng.random_range(0..total)))
        .collect();
    let teacher = strategy.needs_teacher().then(|| {
        let fisher = (strategy == Strategy::Ewc).then(|| {
            let data: Vec<Example> = (0..12)
                .map(|_| Example::new(feature(rng), rng.random_range(0..old)))
                .collect();
            estimate_fisher(&teacher_model, &data, 12).unwrap()
        });
        TeacherSnapshot {
            model: teacher_model,
            fisher,
        }
    });
    GradCase {
        model,
        teacher,
        batch,
        strategy,
        lambda: 10f64.powf(rng.random_range(-2.0..1.0)),
        temperature: rng.random_range(0.5..4.0),
    }
}

pub fn dim(kind: DimensionKind, low: f64, high: f64) -> Option<DimensionSpec> {
    Some(DimensionSpec { kind, low, high })
}

/// Five two-class tasks of 16-dimensional blobs.
pub fn forgetting_stream() -> StreamSpec {
    StreamSpec::uniform_blobs(5, 2, 130, 16, 4.0, 1.0, 7)
}

/// Five two-class tasks whose separation and noise vary from task to task.
pub fn heterogeneous_stream() -> StreamSpec {
    StreamSpec {
        inter_mean_distance: vec![6.0, 2.5, 5.0, 3.0, 4.0],
        noise_scale: vec![1.0, 1.4, 0.8, 1.2, 1.0],
        ..StreamSpec::uniform_blobs(5, 2, 130, 16, 4.0, 1.0, 11)
    }
}

pub fn fixed(
    strategy: Strategy,
    stream: StreamSpec,
    eta: f64,
    lambda: f64,
    m: usize,
) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(strategy, Mode::Fixed, StreamSource::Generate(stream));
    c.fixed.eta = Some(eta);
    c.fixed.lambda = Some(lambda);
    c.fixed.m = Some(m);
    c
}

/// Adaptive config with eta in `[0.05, 0.1]`, lambda in `[1, 100]` and
/// m in `[1, 50]`, all three tuned.
pub fn adaptive(strategy: Strategy, stream: StreamSpec) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(strategy, Mode::Adaptive, StreamSource::Generate(stream));
    c.tune = TuneFlags::ALL;
    c.spaces.eta = dim(DimensionKind::Uniform, 0.05, 0.1);
    c.spaces.lambda = dim(DimensionKind::LogUniform, 1.0, 100.0);
    c.spaces.m = dim(DimensionKind::Integer, 1.0, 50.0);
    c.fixed.eta = Some(0.075);
    c.fixed.lambda = Some(1.0);
    c.fixed.m = Some(10);
    c
}
