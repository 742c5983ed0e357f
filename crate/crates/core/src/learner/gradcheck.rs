use rand::Rng;

use super::model::{get_flat, set_flat, ModelState};
use crate::error::Result;
use crate::seed::EngineRng;
use crate::strategies::{composite_loss, loss_and_gradients, LossSpec};
use crate::taskstream::Example;

/// Minimum number of coordinates compared per check.
pub const MIN_CHECKED_PARAMS: usize = 100;

/// Sign pattern of every hidden pre-activation; a finite-difference probe
/// whose two sides see different patterns straddles a ReLU kink and is not
/// a valid derivative estimate.
fn activation_pattern(model: &ModelState, batch: &[&Example]) -> Vec<bool> {
    let rows = batch.iter().map(|e| e.features.as_slice());
    let Ok((x, n)) = model.flatten_batch(rows) else {
        return Vec::new();
    };
    let cache = model.forward_cached(x, n);
    let hidden = cache.pre.len() - 1;
    cache.pre[..hidden]
        .iter()
        .flatten()
        .map(|&z| z > 0.0)
        .collect()
}

/// Largest relative error between the analytic gradient of the composite
/// loss and central finite differences, over a random sample of at least
/// [`MIN_CHECKED_PARAMS`] coordinates (or all of them for smaller models).
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(
    model: &ModelState,
    batch: &[&Example],
    loss: &LossSpec<'_>,
    eps: f64,
    rng: &mut EngineRng,
) -> Result<f64> {
    let (_, grads) = loss_and_gradients(loss, model, batch)?;
    let total = model.param_count();
    let mut indices: Vec<usize> = if total <= MIN_CHECKED_PARAMS {
        (0..total).collect()
    } else {
        (0..MIN_CHECKED_PARAMS)
            .map(|_| rng.random_range(0..total))
            .collect()
    };
    let base_pattern = activation_pattern(model, batch);

    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    let mut checked = 0;
    let mut attempts = 0;
    while let Some(idx) = indices.pop() {
        attempts += 1;
        let theta = get_flat(&model.layers, idx);
        set_flat(&mut probe.layers, idx, theta + eps);
        let plus_pattern = activation_pattern(&probe, batch);
        let plus = composite_loss(loss, &probe, batch)?;
        set_flat(&mut probe.layers, idx, theta - eps);
        let minus_pattern = activation_pattern(&probe, batch);
        let minus = composite_loss(loss, &probe, batch)?;
        set_flat(&mut probe.layers, idx, theta);

        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            // kink inside the probe interval; resample
            if attempts < 20 * MIN_CHECKED_PARAMS {
                indices.push(rng.random_range(0..total));
            }
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = get_flat(&grads, idx);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / denom);
        checked += 1;
    }
    log::debug!("grad_check compared {checked} coordinates in {attempts} probes");
    Ok(worst)
}
