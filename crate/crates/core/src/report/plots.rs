use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::results::ResultsBundle;
use crate::error::{Error, Result};

/// Files written by [`render_plots`], relative to `out_dir`.
pub const PLOT_FILES: [&str; 4] = [
    "plots/accuracy.svg",
    "plots/eta.svg",
    "plots/lambda.svg",
    "plots/m.svg",
];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A line chart over task indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    /// Draw horizontal-then-vertical steps instead of straight segments.
    pub step: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Chart {
    fn y_transform(&self, y: f64) -> Option<f64> {
        if self.log_y {
            (y > 0.0).then(|| y.log10())
        } else {
            y.is_finite().then_some(y)
        }
    }

    /// Standalone SVG 1.1 document.
    pub fn to_svg(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter_map(|&(x, y)| self.y_transform(y).map(|ty| (x, ty)))
            .collect();
        let (mut x0, mut x1) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                (a.min(p.0), b.max(p.0))
            });
        let (mut y0, mut y1) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                (a.min(p.1), b.max(p.1))
            });
        if pts.is_empty() {
            (x0, x1, y0, y1) = (1.0, 2.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            let pad = if y0.abs() > 1e-12 {
                0.1 * y0.abs()
            } else {
                0.5
            };
            y0 -= pad;
            y1 += pad;
        } else {
            let pad = 0.05 * (y1 - y0);
            y0 -= pad;
            y1 += pad;
        }
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| TOP + plot_h - (y - y0) / (y1 - y0) * plot_h;

        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            s,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + plot_w / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
        );

        let first_task = x0.ceil() as i64;
        let last_task = x1.floor() as i64;
        let stride = ((last_task - first_task) / 10 + 1).max(1);
        let mut k = first_task;
        while k <= last_task {
            let x = sx(k as f64);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
                TOP + plot_h,
                TOP + plot_h + 5.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{k}</text>"#,
                TOP + plot_h + 18.0
            );
            k += stride;
        }
        for i in 0..=4 {
            let v = y0 + (y1 - y0) * i as f64 / 4.0;
            let y = sy(v);
            let label = if self.log_y {
                fmt_tick(10f64.powf(v))
            } else {
                fmt_tick(v)
            };
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
                LEFT + plot_w
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
                LEFT - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + plot_h / 2.0,
            TOP + plot_h / 2.0,
            escape(&self.y_label)
        );

        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mapped: Vec<(f64, f64)> = series
                .points
                .iter()
                .filter_map(|&(x, y)| self.y_transform(y).map(|ty| (sx(x), sy(ty))))
                .collect();
            if !mapped.is_empty() {
                let mut d = format!("M{:.2},{:.2}", mapped[0].0, mapped[0].1);
                for w in mapped.windows(2) {
                    if self.step {
                        let _ = write!(d, " H{:.2} V{:.2}", w[1].0, w[1].1);
                    } else {
                        let _ = write!(d, " L{:.2},{:.2}", w[1].0, w[1].1);
                    }
                }
                let _ = writeln!(
                    s,
                    r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="2"/>"#
                );
                for (x, y) in &mapped {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#
                    );
                }
            }
            let ly = TOP + 12.0 + 18.0 * i as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
                lx + 20.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}">{}</text>"#,
                lx + 26.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn mean_by_task(
    bundle: &ResultsBundle,
    value: impl Fn(&crate::orchestrator::TaskOutcome) -> f64,
) -> Vec<(f64, f64)> {
    let tasks = bundle
        .seeds
        .iter()
        .map(|s| s.outcomes.len())
        .min()
        .unwrap_or(0);
    (0..tasks)
        .map(|i| {
            let v = bundle
                .seeds
                .iter()
                .map(|s| value(&s.outcomes[i]))
                .sum::<f64>()
                / bundle.seeds.len() as f64;
            ((i + 1) as f64, v)
        })
        .collect()
}

fn per_seed(
    bundles: &[&ResultsBundle],
    value: impl Fn(&crate::orchestrator::TaskOutcome) -> f64,
) -> Vec<Series> {
    bundles
        .iter()
        .flat_map(|b| {
            b.seeds.iter().map(|s| Series {
                label: format!("{} seed {}", b.label, s.seed),
                points: s
                    .outcomes
                    .iter()
                    .map(|o| (o.task_id as f64, value(o)))
                    .collect(),
            })
        })
        .collect()
}

/// Charts for the accuracy curve and the chosen hyperparameters.
pub fn charts(bundles: &[&ResultsBundle]) -> Vec<Chart> {
    let accuracy = Chart {
        title: "Accuracy after each task".into(),
        x_label: "task".into(),
        y_label: "mean accuracy over seen tasks (%)".into(),
        log_y: false,
        step: false,
        series: bundles
            .iter()
            .map(|b| Series {
                label: b.label.clone(),
                points: mean_by_task(b, |o| {
                    o.accuracy_row.iter().sum::<f64>() / o.accuracy_row.len() as f64
                }),
            })
            .collect(),
    };
    let hyper = |title: &str,
                 y: &str,
                 log_y: bool,
                 f: fn(&crate::orchestrator::TaskOutcome) -> f64| Chart {
        title: title.into(),
        x_label: "task".into(),
        y_label: y.into(),
        log_y,
        step: true,
        series: per_seed(bundles, f),
    };
    vec![
        accuracy,
        hyper("Learning rate per task", "eta", false, |o| o.config.eta),
        hyper(
            "Regularization strength per task",
            "lambda (log scale)",
            true,
            |o| o.config.lambda,
        ),
        hyper("Exemplars per class per task", "m", false, |o| {
            o.config.m as f64
        }),
    ]
}

/// Writes the four charts under `out_dir/plots/`.
pub fn render_plots(bundles: &[&ResultsBundle], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if bundles.is_empty() || bundles.iter().any(|b| b.seeds.is_empty()) {
        return Err(Error::validation("nothing to plot"));
    }
    let dir = out_dir.join("plots");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    charts(bundles)
        .iter()
        .zip(PLOT_FILES)
        .map(|(chart, rel)| {
            let path = out_dir.join(rel);
            std::fs::write(&path, chart.to_svg()).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
