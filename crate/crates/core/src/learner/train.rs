use rand::seq::SliceRandom;

use super::model::ModelState;
use super::optim::OptimizerState;
use crate::error::{Error, Result};
use crate::seed::EngineRng;
use crate::strategies::{loss_and_gradients, ClassMeans, LossSpec};
use crate::taskstream::Example;

/// One pass over `data` in shuffled mini-batches. Returns the mean batch loss.
///
/// Fails with [`Error::Numeric`] (carrying the batch index) as soon as a loss
/// or an updated parameter stops being finite.
pub fn train_epoch(
    model: &mut ModelState,
    optimizer: &mut OptimizerState,
    data: &[Example],
    loss: &LossSpec<'_>,
    batch_size: usize,
    rng: &mut EngineRng,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);

    let mut total = 0.0;
    let mut batches = 0usize;
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
        let (value, grads) = loss_and_gradients(loss, model, &batch)?;
        if !value.is_finite() {
            return Err(Error::Numeric {
                batch: b,
                message: format!("loss is {value}"),
            });
        }
        optimizer.step(model, &grads)?;
        if !model.all_finite() {
            return Err(Error::Numeric {
                batch: b,
                message: "parameters diverged".into(),
            });
        }
        total += value;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// How predictions are made at evaluation time.
#[derive(Debug, Clone, Copy)]
pub enum EvalMode<'a> {
    /// Arg-max over head logits.
    Softmax,
    /// Nearest class mean of exemplar features.
    Nme(&'a ClassMeans),
}

/// Top-1 predictions for each example; ties go to the lowest head row.
pub fn predict(model: &ModelState, examples: &[Example], mode: EvalMode<'_>) -> Result<Vec<usize>> {
    let rows: Vec<&[f64]> = examples.iter().map(|e| e.features.as_slice()).collect();
    match mode {
        EvalMode::Softmax => {
            let (x, n) = model.flatten_batch(rows)?;
            let cache = model.forward_cached(x, n);
            let k = model.num_classes();
            if k == 0 {
                return Err(Error::validation("model has no classes"));
            }
            Ok(cache
                .logits()
                .chunks_exact(k)
                .map(|z| {
                    let mut best = 0;
                    for (j, &v) in z.iter().enumerate() {
                        if v > z[best] {
                            best = j;
                        }
                    }
                    model.head_labels[best]
                })
                .collect())
        }
        EvalMode::Nme(means) => {
            let feats = model.features(&rows)?;
            feats.iter().map(|f| means.nearest(f)).collect()
        }
    }
}

/// Percentage of correct top-1 predictions.
pub fn evaluate_accuracy(
    model: &ModelState,
    examples: &[Example],
    mode: EvalMode<'_>,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::validation(
            "cannot evaluate accuracy on an empty dataset",
        ));
    }
    let rows = model.label_rows();
    if let Some(e) = examples.iter().find(|e| !rows.contains_key(&e.label)) {
        return Err(Error::validation(format!(
            "class {} has not been seen by the model",
            e.label
        )));
    }
    if let EvalMode::Nme(means) = mode {
        if let Some(l) = model
            .head_labels
            .iter()
            .find(|l| !means.means.contains_key(l))
        {
            return Err(Error::validation(format!("no exemplar mean for class {l}")));
        }
    }
    let preds = predict(model, examples, mode)?;
    let correct = preds
        .iter()
        .zip(examples)
        .filter(|(p, e)| **p == e.label)
        .count();
    Ok(100.0 * correct as f64 / examples.len() as f64)
}
