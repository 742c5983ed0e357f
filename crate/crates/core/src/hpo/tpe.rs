use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::space::{Dimension, DimensionKind, HyperConfig, SearchSpace};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Multivariate tree-structured Parzen estimator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpeSampler {
    pub n_startup: usize,
    pub n_candidates: usize,
    pub gamma: f64,
    /// Bandwidth floor as a fraction of each dimension's range.
    pub min_bandwidth_fraction: f64,
}

impl Default for TpeSampler {
    fn default() -> Self {
        Self {
            n_startup: 10,
            n_candidates: 24,
            gamma: 0.25,
            min_bandwidth_fraction: 0.01,
        }
    }
}

/// Which proposal rule drives a search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Tpe,
    Random,
}

/// Draws every dimension of `space` from its prior; dimensions outside the
/// space keep the value in `base`.
pub fn sample_prior(space: &SearchSpace, base: &HyperConfig, rng: &mut impl Rng) -> HyperConfig {
    let mut out = *base;
    for d in &space.dims {
        out.set(d.name, d.sample_prior(rng));
    }
    out
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Per-dimension kernel data for one of the two density models.
struct Parzen {
    points: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
}

impl Parzen {
    /// Scott-style bandwidth `spread * n^(-1/5)`, with `spread` the standard
    /// deviation of all observations so a tight good set cannot collapse its
    /// own kernels.
    fn fit(dims: &[Dimension], points: Vec<Vec<f64>>, spread: &[f64], floor: f64) -> Self {
        let n = points.len() as f64;
        let bandwidth = dims
            .iter()
            .zip(spread)
            .map(|(d, s)| {
                let (a, b) = d.internal_bounds();
                (s * n.powf(-0.2)).max(floor * (b - a)).min(b - a)
            })
            .collect();
        Self { points, bandwidth }
    }

    /// Log of the mixture density at `x`, each component a product of
    /// truncated Gaussians (integer dimensions integrate over the unit cell).
    fn log_density(&self, dims: &[Dimension], x: &[f64]) -> f64 {
        let comps: Vec<f64> = self
            .points
            .iter()
            .map(|p| {
                dims.iter()
                    .enumerate()
                    .map(|(j, d)| log_kernel(d, x[j], p[j], self.bandwidth[j]))
                    .sum()
            })
            .collect();
        let max = comps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + (comps.iter().map(|c| (c - max).exp()).sum::<f64>() / comps.len() as f64).ln()
    }

    fn sample(&self, dims: &[Dimension], rng: &mut impl Rng) -> Vec<f64> {
        let p = &self.points[rng.random_range(0..self.points.len())];
        dims.iter()
            .enumerate()
            .map(|(j, d)| {
                let (a, b) = d.internal_bounds();
                let x = truncated_normal(p[j], self.bandwidth[j], a, b, rng);
                match d.kind {
                    DimensionKind::Integer => x.round().clamp(d.low, d.high),
                    _ => x,
                }
            })
            .collect()
    }
}

fn log_kernel(d: &Dimension, x: f64, mu: f64, h: f64) -> f64 {
    let (a, b) = d.internal_bounds();
    let z_mass = normal_cdf((b - mu) / h) - normal_cdf((a - mu) / h);
    let log_pdf = |v: f64| -0.5 * ((v - mu) / h).powi(2) - LN_SQRT_2PI - h.ln();
    match d.kind {
        DimensionKind::Integer => {
            let cell = normal_cdf((x + 0.5 - mu) / h) - normal_cdf((x - 0.5 - mu) / h);
            // deep in the tail the difference underflows; the midpoint
            // density times a unit width is then accurate
            let log_cell = if cell > 1e-300 { cell.ln() } else { log_pdf(x) };
            log_cell - z_mass.ln()
        }
        _ => log_pdf(x) - z_mass.ln(),
    }
}

fn truncated_normal(mu: f64, h: f64, a: f64, b: f64, rng: &mut impl Rng) -> f64 {
    // mu lies inside [a, b], so each draw is accepted with probability >= 1/2
    for _ in 0..64 {
        let z: f64 = StandardNormal.sample(rng);
        let x = mu + h * z;
        if (a..=b).contains(&x) {
            return x;
        }
    }
    mu.clamp(a, b)
}

impl TpeSampler {
    /// Proposes the next configuration from `(config, objective)` history.
    /// Lower objectives are better.
    pub fn suggest(
        &self,
        space: &SearchSpace,
        history: &[(HyperConfig, f64)],
        base: &HyperConfig,
        rng: &mut impl Rng,
    ) -> HyperConfig {
        let usable: Vec<&(HyperConfig, f64)> =
            history.iter().filter(|(_, y)| y.is_finite()).collect();
        if space.dims.is_empty() || usable.len() < self.n_startup.max(2) {
            return sample_prior(space, base, rng);
        }
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.sort_by(|&i, &j| usable[i].1.total_cmp(&usable[j].1).then(i.cmp(&j)));
        let n_good =
            ((self.gamma * usable.len() as f64).ceil() as usize).clamp(1, usable.len() - 1);

        let dims = &space.dims;
        let internal = |c: &HyperConfig| -> Vec<f64> {
            dims.iter().map(|d| d.to_internal(c.get(d.name))).collect()
        };
        let points: Vec<Vec<f64>> = usable.iter().map(|u| internal(&u.0)).collect();
        let spread: Vec<f64> = (0..dims.len())
            .map(|j| {
                let n = points.len() as f64;
                let mean = points.iter().map(|p| p[j]).sum::<f64>() / n;
                (points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect();
        let pick = |idx: &[usize]| idx.iter().map(|&i| points[i].clone()).collect::<Vec<_>>();
        let floor = self.min_bandwidth_fraction;
        let good = Parzen::fit(dims, pick(&order[..n_good]), &spread, floor);
        let bad = Parzen::fit(dims, pick(&order[n_good..]), &spread, floor);

        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..self.n_candidates.max(1) {
            let x = good.sample(dims, rng);
            let score = good.log_density(dims, &x) - bad.log_density(dims, &x);
            let better = match &best {
                None => true,
                Some((s, _)) => score > *s || (s.is_nan() && !score.is_nan()),
            };
            if better {
                best = Some((score, x));
            }
        }
        let x = best.map(|(_, x)| x).expect("at least one candidate");
        let mut out = *base;
        for (d, v) in dims.iter().zip(x) {
            out.set(d.name, d.to_external(v));
        }
        out
    }
}

impl SamplerKind {
    pub fn suggest(
        &self,
        tpe: &TpeSampler,
        space: &SearchSpace,
        history: &[(HyperConfig, f64)],
        base: &HyperConfig,
        rng: &mut impl Rng,
    ) -> HyperConfig {
        match self {
            SamplerKind::Tpe => tpe.suggest(space, history, base, rng),
            SamplerKind::Random => sample_prior(space, base, rng),
        }
    }
}
