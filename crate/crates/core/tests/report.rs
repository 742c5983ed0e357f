mod common;

use adacl_core::hpo::DimensionKind;
use adacl_core::orchestrator::{run_experiment, run_fixed_baseline};
use adacl_core::report::{
    charts, compute_aggregates, read_results, render_plots, write_results, Chart, ResultsBundle,
    RunMeta, Series, PLOT_FILES,
};
use adacl_core::taskstream::StreamSpec;
use adacl_core::{ExperimentConfig, Strategy};
use common::*;

fn stream(tasks: usize) -> StreamSpec {
    StreamSpec::uniform_blobs(tasks, 2, 60, 8, 4.0, 1.0, 13)
}

fn bundle(cfg: ExperimentConfig) -> ResultsBundle {
    let runs = match cfg.mode {
        adacl_core::Mode::Fixed => run_fixed_baseline(&cfg, None),
        adacl_core::Mode::Adaptive => run_experiment(&cfg, None),
    }
    .unwrap();
    ResultsBundle::new(cfg, runs).unwrap()
}

fn quick_adaptive(tasks: usize) -> ExperimentConfig {
    let mut cfg = adaptive(Strategy::Icarl, stream(tasks));
    cfg.training.epochs = 9;
    cfg.search.configs = 6;
    cfg.spaces.m = dim(DimensionKind::Integer, 1.0, 20.0);
    cfg.seeds = vec![0, 1];
    cfg
}

#[test]
fn written_results_read_back_identically() {
    let b = bundle(quick_adaptive(3));
    let dir = tempfile::tempdir().unwrap();
    write_results(&b, &RunMeta::for_runs(1, &b.seeds), dir.path()).unwrap();
    let back = read_results(dir.path()).unwrap();
    assert_eq!(back.aggregate, compute_aggregates(&back.seeds).unwrap());
    assert_eq!(back.aggregate, b.aggregate);
    assert_eq!(back.config, b.config);
    for (a, r) in b.seeds.iter().zip(&back.seeds) {
        assert_eq!(a.accuracy, r.accuracy);
        assert_eq!(a.outcomes, r.outcomes);
        assert_eq!(a.trials.len(), r.trials.len());
        assert!(r.trials.iter().all(|t| t.duration_ms.is_none()));
    }
}

#[test]
fn aggregates_are_seed_means() {
    let b = bundle(quick_adaptive(2));
    let acc = b.seeds.iter().map(|s| s.acc).sum::<f64>() / 2.0;
    let bwt = b.seeds.iter().map(|s| s.bwt.unwrap()).sum::<f64>() / 2.0;
    assert!((b.mean_acc() - acc).abs() < 1e-12);
    assert!((b.mean_bwt().unwrap() - bwt).abs() < 1e-12);
}

#[test]
fn plots_are_well_formed_svg() {
    let b = bundle(quick_adaptive(2));
    let dir = tempfile::tempdir().unwrap();
    let written = render_plots(&[&b], dir.path()).unwrap();
    assert_eq!(written.len(), PLOT_FILES.len());
    for rel in PLOT_FILES {
        let text = std::fs::read_to_string(dir.path().join(rel)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{rel}: {e}"));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }
}

#[test]
fn accuracy_curve_has_one_point_per_task() {
    let b = bundle(quick_adaptive(2));
    let acc = &charts(&[&b])[0];
    assert_eq!(acc.series.len(), 1);
    let pts = &acc.series[0].points;
    assert_eq!(pts.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1.0, 2.0]);
    let first = b
        .seeds
        .iter()
        .map(|s| s.accuracy.get(0, 0).unwrap())
        .sum::<f64>()
        / 2.0;
    assert!((pts[0].1 - first).abs() < 1e-9);
}

#[test]
fn fixed_mode_hyperparameter_plots_are_flat() {
    let b = bundle(fixed(Strategy::Icarl, stream(3), 0.075, 1.0, 5));
    for chart in &charts(&[&b])[1..] {
        // a log axis drops non-positive values (the first task's lambda is 0)
        let drawn = |s: &Series| -> Vec<f64> {
            s.points
                .iter()
                .map(|p| p.1)
                .filter(|&y| !chart.log_y || y > 0.0)
                .collect()
        };
        for s in &chart.series {
            let ys = drawn(s);
            assert!(ys.len() >= 2, "{}: {:?}", chart.title, s.points);
            assert!(
                ys.iter().all(|&y| y == ys[0]),
                "{}: {:?}",
                chart.title,
                s.points
            );
        }
    }
}

#[test]
fn labels_are_escaped() {
    let chart = Chart {
        title: "a < b & \"c\"".into(),
        x_label: "task".into(),
        y_label: "y".into(),
        log_y: true,
        step: false,
        series: vec![Series {
            label: "<x>".into(),
            points: vec![(1.0, 0.0), (2.0, 10.0)],
        }],
    };
    let svg = chart.to_svg();
    roxmltree::Document::parse(&svg).unwrap();
    assert!(svg.contains("a &lt; b &amp; &quot;c&quot;"));
}
