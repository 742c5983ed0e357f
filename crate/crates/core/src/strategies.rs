//! The regularizers added to cross-entropy during incremental training, plus
//! the classifier-side corrections (weight aligning, nearest-mean-of-exemplars).
//!
//! The training objective for one mini-batch is
//!
//! ```text
//! L = CE(f(x), y) + lambda * Reg(theta)
//! ```
//!
//! where `Reg` is the Fisher-weighted squared drift from the previous task's
//! weights for EWC, and the temperature-softened KL divergence from the
//! previous model's old-class outputs for LwF, iCaRL and WA.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{tensors, zeros_like, LayerTensors, ModelState};
use crate::taskstream::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    None,
    Ewc,
    Lwf,
    Icarl,
    Wa,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::None,
        Strategy::Ewc,
        Strategy::Lwf,
        Strategy::Icarl,
        Strategy::Wa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Ewc => "ewc",
            Strategy::Lwf => "lwf",
            Strategy::Icarl => "icarl",
            Strategy::Wa => "wa",
        }
    }

    /// Strategies whose regularizer needs the previous model.
    pub fn needs_teacher(self) -> bool {
        self != Strategy::None
    }

    pub fn distills(self) -> bool {
        matches!(self, Strategy::Lwf | Strategy::Icarl | Strategy::Wa)
    }

    /// Strategies that are defined in terms of an exemplar memory.
    pub fn requires_memory(self) -> bool {
        matches!(self, Strategy::Icarl | Strategy::Wa)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Diagonal Fisher information, shaped like the model it was estimated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherDiagonal {
    pub layers: LayerTensors,
}

impl FisherDiagonal {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        tensors(&self.layers).flatten().copied()
    }
}

/// Frozen previous-task model (and its Fisher diagonal for EWC).
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSnapshot {
    pub model: ModelState,
    pub fisher: Option<FisherDiagonal>,
}

/// Everything needed to evaluate the composite loss on a batch.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a> {
    pub strategy: Strategy,
    pub lambda: f64,
    pub temperature: f64,
    pub teacher: Option<&'a TeacherSnapshot>,
}

impl LossSpec<'_> {
    /// Plain cross-entropy.
    pub fn plain() -> Self {
        Self {
            strategy: Strategy::None,
            lambda: 0.0,
            temperature: 2.0,
            teacher: None,
        }
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    log_softmax(z).into_iter().map(f64::exp).collect()
}

/// KL(teacher || student) between temperature-softened distributions over
/// the columns `old_class_indices`, averaged over the batch.
pub fn kd_loss(
    student_logits: &[Vec<f64>],
    teacher_logits: &[Vec<f64>],
    temperature: f64,
    old_class_indices: &[usize],
) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if old_class_indices.is_empty() {
        return Err(Error::config("distillation needs at least one old class"));
    }
    if student_logits.len() != teacher_logits.len() {
        return Err(Error::shape("student and teacher batches differ in length"));
    }
    if student_logits.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (s, t) in student_logits.iter().zip(teacher_logits) {
        let pick = |row: &[f64]| -> Result<Vec<f64>> {
            old_class_indices
                .iter()
                .map(|&j| {
                    row.get(j)
                        .map(|v| v / temperature)
                        .ok_or_else(|| Error::shape(format!("logit row has no column {j}")))
                })
                .collect()
        };
        let ls = log_softmax(&pick(s)?);
        let lt = log_softmax(&pick(t)?);
        total += lt
            .iter()
            .zip(&ls)
            .map(|(a, b)| a.exp() * (a - b))
            .sum::<f64>();
    }
    // clamp rounding noise; KL is non-negative
    Ok((total / student_logits.len() as f64).max(0.0))
}

/// Mean cross-entropy of head logits (`n x k`) against head rows of the true labels.
fn cross_entropy_and_grad(logits: &[f64], k: usize, targets: &[usize], grad: &mut [f64]) -> f64 {
    let n = targets.len();
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let z = &logits[i * k..(i + 1) * k];
        let ls = log_softmax(z);
        total -= ls[y];
        let g = &mut grad[i * k..(i + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = (ls[j].exp() - if j == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    total / n as f64
}

fn head_targets(model: &ModelState, batch: &[&Example]) -> Result<Vec<usize>> {
    let rows = model.label_rows();
    batch
        .iter()
        .map(|e| {
            rows.get(&e.label)
                .copied()
                .ok_or_else(|| Error::validation(format!("class {} has no head row", e.label)))
        })
        .collect()
}

fn check_teacher<'a>(
    spec: &LossSpec<'a>,
    model: &ModelState,
) -> Result<Option<&'a TeacherSnapshot>> {
    if !spec.strategy.needs_teacher() {
        return Ok(None);
    }
    let teacher = spec.teacher.ok_or_else(|| {
        Error::config(format!(
            "strategy {} needs a snapshot of the previous model",
            spec.strategy
        ))
    })?;
    if !model.head_extends(&teacher.model) {
        return Err(Error::shape(
            "model does not extend the snapshot it is regularized towards",
        ));
    }
    Ok(Some(teacher))
}

/// Fisher-weighted squared distance `sum_i F_i (theta_i - theta'_i)^2` over
/// the parameters the snapshot has. Head rows added after the snapshot are
/// free.
pub fn ewc_penalty(model: &ModelState, snapshot: &TeacherSnapshot) -> Result<f64> {
    let fisher = ewc_fisher(model, snapshot)?;
    let mut total = 0.0;
    for ((cur, old), f) in model
        .layers
        .iter()
        .zip(&snapshot.model.layers)
        .zip(&fisher.layers)
    {
        for (a, (b, w)) in cur.weights.iter().zip(old.weights.iter().zip(&f.weights)) {
            total += w * (a - b) * (a - b);
        }
        for (a, (b, w)) in cur.bias.iter().zip(old.bias.iter().zip(&f.bias)) {
            total += w * (a - b) * (a - b);
        }
    }
    Ok(total)
}

fn ewc_fisher<'a>(model: &ModelState, snapshot: &'a TeacherSnapshot) -> Result<&'a FisherDiagonal> {
    let fisher = snapshot
        .fisher
        .as_ref()
        .ok_or_else(|| Error::config("EWC snapshot carries no Fisher diagonal"))?;
    if !model.head_extends(&snapshot.model) {
        return Err(Error::shape("model and snapshot shapes differ"));
    }
    let fits = fisher.layers.len() == snapshot.model.layers.len()
        && fisher
            .layers
            .iter()
            .zip(&snapshot.model.layers)
            .all(|(f, l)| f.weights.len() == l.weights.len() && f.bias.len() == l.bias.len());
    if !fits {
        return Err(Error::shape(
            "Fisher diagonal does not match the snapshot's parameters",
        ));
    }
    Ok(fisher)
}

/// Adds `scale * d/dtheta ewc_penalty` into `grads`.
fn add_ewc_grad(
    model: &ModelState,
    snapshot: &TeacherSnapshot,
    scale: f64,
    grads: &mut LayerTensors,
) -> Result<()> {
    let fisher = ewc_fisher(model, snapshot)?;
    for (((g, cur), old), f) in grads
        .iter_mut()
        .zip(&model.layers)
        .zip(&snapshot.model.layers)
        .zip(&fisher.layers)
    {
        for (((gw, a), b), w) in g
            .weights
            .iter_mut()
            .zip(&cur.weights)
            .zip(&old.weights)
            .zip(&f.weights)
        {
            *gw += scale * 2.0 * w * (a - b);
        }
        for (((gb, a), b), w) in g.bias.iter_mut().zip(&cur.bias).zip(&old.bias).zip(&f.bias) {
            *gb += scale * 2.0 * w * (a - b);
        }
    }
    Ok(())
}

struct Evaluated {
    loss: f64,
    grads: Option<LayerTensors>,
}

fn evaluate(
    spec: &LossSpec<'_>,
    model: &ModelState,
    batch: &[&Example],
    want_grad: bool,
) -> Result<Evaluated> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let teacher = check_teacher(spec, model)?;
    let targets = head_targets(model, batch)?;
    let (x, n) = model.flatten_batch(batch.iter().map(|e| e.features.as_slice()))?;
    let cache = model.forward_cached(x.clone(), n);
    let k = model.num_classes();
    let logits = cache.logits();
    let mut dlogits = vec![0.0; n * k];
    let mut loss = cross_entropy_and_grad(logits, k, &targets, &mut dlogits);

    let mut ewc_snapshot = None;
    if let Some(teacher) = teacher.filter(|_| spec.lambda != 0.0) {
        match spec.strategy {
            Strategy::Ewc => {
                loss += spec.lambda * ewc_penalty(model, teacher)?;
                ewc_snapshot = Some(teacher);
            }
            Strategy::Lwf | Strategy::Icarl | Strategy::Wa => {
                let tau = spec.temperature;
                if !(tau > 0.0) {
                    return Err(Error::config(format!(
                        "temperature must be positive, got {tau}"
                    )));
                }
                let k_old = teacher.model.num_classes();
                if k_old > 0 {
                    let t_cache = teacher.model.forward_cached(x, n);
                    let t_logits = t_cache.logits();
                    let mut kd = 0.0;
                    for i in 0..n {
                        let s = &logits[i * k..i * k + k_old];
                        let t = &t_logits[i * k_old..(i + 1) * k_old];
                        let ls = log_softmax(&s.iter().map(|v| v / tau).collect::<Vec<_>>());
                        let lt = log_softmax(&t.iter().map(|v| v / tau).collect::<Vec<_>>());
                        kd += lt
                            .iter()
                            .zip(&ls)
                            .map(|(a, b)| a.exp() * (a - b))
                            .sum::<f64>();
                        let g = &mut dlogits[i * k..i * k + k_old];
                        for ((gj, a), b) in g.iter_mut().zip(&ls).zip(&lt) {
                            *gj += spec.lambda * (a.exp() - b.exp()) / (tau * n as f64);
                        }
                    }
                    loss += spec.lambda * kd / n as f64;
                }
            }
            Strategy::None => {}
        }
    }

    let grads = if want_grad {
        let mut g = model.backward(&cache, &dlogits);
        if let Some(teacher) = ewc_snapshot {
            add_ewc_grad(model, teacher, spec.lambda, &mut g)?;
        }
        Some(g)
    } else {
        None
    };
    Ok(Evaluated { loss, grads })
}

/// Cross-entropy over the batch plus `lambda` times the strategy's
/// regularizer. A zero `lambda` skips the regularizer entirely.
pub fn composite_loss(spec: &LossSpec<'_>, model: &ModelState, batch: &[&Example]) -> Result<f64> {
    Ok(evaluate(spec, model, batch, false)?.loss)
}

pub fn loss_and_gradients(
    spec: &LossSpec<'_>,
    model: &ModelState,
    batch: &[&Example],
) -> Result<(f64, LayerTensors)> {
    let e = evaluate(spec, model, batch, true)?;
    Ok((e.loss, e.grads.expect("gradients requested")))
}

/// Empirical diagonal Fisher: the mean over examples of the squared gradient
/// of `-log p(y | x)` with the true label.
///
/// Examples are visited in a canonical content order, and when
/// `sample_count` is smaller than the data the first `sample_count` of that
/// order are used, so the estimate does not depend on input order.
pub fn estimate_fisher(
    model: &ModelState,
    data: &[Example],
    sample_count: usize,
) -> Result<FisherDiagonal> {
    let mut order: Vec<&Example> = data.iter().collect();
    order.sort_by(|a, b| {
        a.content_hash()
            .cmp(&b.content_hash())
            .then_with(|| a.label.cmp(&b.label))
            .then_with(|| {
                a.features
                    .partial_cmp(&b.features)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    order.truncate(sample_count.max(1));

    let mut acc = zeros_like(&model.layers);
    let rows = model.label_rows();
    let k = model.num_classes();
    for ex in &order {
        let y = *rows
            .get(&ex.label)
            .ok_or_else(|| Error::validation(format!("class {} has no head row", ex.label)))?;
        let (x, n) = model.flatten_batch([ex.features.as_slice()])?;
        let cache = model.forward_cached(x, n);
        let mut d = vec![0.0; k];
        cross_entropy_and_grad(cache.logits(), k, &[y], &mut d);
        let g = model.backward(&cache, &d);
        for (a, gl) in acc.iter_mut().zip(&g) {
            for (s, v) in a.weights.iter_mut().zip(&gl.weights) {
                *s += v * v;
            }
            for (s, v) in a.bias.iter_mut().zip(&gl.bias) {
                *s += v * v;
            }
        }
    }
    let count = order.len().max(1) as f64;
    for a in acc.iter_mut() {
        a.weights
            .iter_mut()
            .chain(a.bias.iter_mut())
            .for_each(|v| *v /= count);
    }
    Ok(FisherDiagonal { layers: acc })
}

/// Combines the running Fisher of earlier tasks with the newest estimate,
/// weighting by the share of classes each covers:
/// `F = (k_old / k) * F_old + (1 - k_old / k) * F_new`.
/// `old` may have fewer head rows than `new`; missing rows count as zero.
pub fn merge_fisher(
    old: &FisherDiagonal,
    new: &FisherDiagonal,
    old_classes: usize,
    total_classes: usize,
) -> Result<FisherDiagonal> {
    if old.layers.len() != new.layers.len() || total_classes == 0 {
        return Err(Error::shape("Fisher diagonals have different depths"));
    }
    let alpha = old_classes as f64 / total_classes as f64;
    let mut out = new.clone();
    for (o, n) in out.layers.iter_mut().zip(&old.layers) {
        if n.weights.len() > o.weights.len() || n.bias.len() > o.bias.len() {
            return Err(Error::shape(
                "older Fisher diagonal is larger than the newer one",
            ));
        }
        for (i, v) in o.weights.iter_mut().enumerate() {
            *v = alpha * n.weights.get(i).copied().unwrap_or(0.0) + (1.0 - alpha) * *v;
        }
        for (i, v) in o.bias.iter_mut().enumerate() {
            *v = alpha * n.bias.get(i).copied().unwrap_or(0.0) + (1.0 - alpha) * *v;
        }
    }
    Ok(out)
}

fn row_norm(model: &ModelState, row: usize) -> f64 {
    model
        .head()
        .row(row)
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Weight aligning: rescales the new-class head rows by
/// `mean(|w_old|) / mean(|w_new|)`. Nothing else changes.
pub fn wa_align(model: &ModelState, old_rows: &[usize], new_rows: &[usize]) -> Result<ModelState> {
    if old_rows.is_empty() || new_rows.is_empty() {
        return Err(Error::validation(
            "weight aligning needs old and new classes",
        ));
    }
    let k = model.num_classes();
    if let Some(r) = old_rows.iter().chain(new_rows).find(|&&r| r >= k) {
        return Err(Error::validation(format!("head row {r} does not exist")));
    }
    if old_rows.iter().any(|r| new_rows.contains(r)) {
        return Err(Error::validation("old and new class rows overlap"));
    }
    let mean =
        |rows: &[usize]| rows.iter().map(|&r| row_norm(model, r)).sum::<f64>() / rows.len() as f64;
    let old_mean = mean(old_rows);
    let new_mean = mean(new_rows);
    if !(new_mean > 0.0) || !new_mean.is_finite() {
        return Err(Error::Degenerate(format!(
            "mean new-class weight norm is {new_mean}"
        )));
    }
    let gamma = old_mean / new_mean;
    let mut aligned = model.clone();
    let head = aligned.head_mut();
    for &r in new_rows {
        head.row_mut(r).iter_mut().for_each(|w| *w *= gamma);
    }
    Ok(aligned)
}

fn l2_normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Normalized class means in the model's penultimate feature space.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassMeans {
    pub means: BTreeMap<usize, Vec<f64>>,
}

impl ClassMeans {
    /// Mean of the L2-normalized features of each class's exemplars,
    /// normalized again.
    pub fn compute(model: &ModelState, exemplars: &BTreeMap<usize, Vec<&Example>>) -> Result<Self> {
        let mut means = BTreeMap::new();
        for (&label, examples) in exemplars {
            if examples.is_empty() {
                continue;
            }
            let rows: Vec<&[f64]> = examples.iter().map(|e| e.features.as_slice()).collect();
            let feats = model.features(&rows)?;
            let mut mean = vec![0.0; model.feature_dim()];
            for f in &feats {
                for (m, v) in mean.iter_mut().zip(l2_normalized(f)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= feats.len() as f64);
            means.insert(label, l2_normalized(&mean));
        }
        Ok(Self { means })
    }

    /// Label of the nearest mean to the normalized feature; ties go to the
    /// lowest label.
    pub fn nearest(&self, feature: &[f64]) -> Result<usize> {
        let q = l2_normalized(feature);
        let mut best: Option<(usize, f64)> = None;
        for (&label, mean) in &self.means {
            if mean.len() != q.len() {
                return Err(Error::shape("class mean and feature dimensions differ"));
            }
            let d: f64 = mean.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((label, d));
            }
        }
        best.map(|(l, _)| l)
            .ok_or_else(|| Error::validation("no class means available"))
    }
}

/// Nearest-mean-of-exemplars prediction for a single input.
pub fn nme_classify(model: &ModelState, means: &ClassMeans, query: &[f64]) -> Result<usize> {
    if let Some(l) = model
        .head_labels
        .iter()
        .find(|l| !means.means.contains_key(l))
    {
        return Err(Error::validation(format!(
            "missing exemplar mean for class {l}"
        )));
    }
    let f = model.features(&[query])?;
    means.nearest(&f[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{init_model, Activation, Architecture};

    fn logistic(w: f64) -> ModelState {
        // 1 input, 2 classes; row 1 carries w, row 0 stays zero, so
        // p(class 1) = sigmoid(w x)
        let mut m = init_model(&Architecture::new(vec![1, 2], Activation::Relu), 0).unwrap();
        m.layers[0].weights = vec![0.0, w];
        m.layers[0].bias = vec![0.0, 0.0];
        m
    }

    #[test]
    fn kd_loss_known_values() {
        let a = vec![vec![2.0, 0.0]];
        let b = vec![vec![0.0, 2.0]];
        assert_eq!(kd_loss(&a, &a, 1.0, &[0, 1]).unwrap(), 0.0);
        // brute force KL(softmax([2,0]) || softmax([0,2]))
        let e2 = 2f64.exp();
        let p = [e2 / (e2 + 1.0), 1.0 / (e2 + 1.0)];
        let q = [1.0 / (e2 + 1.0), e2 / (e2 + 1.0)];
        let kl = p[0] * (p[0] / q[0]).ln() + p[1] * (p[1] / q[1]).ln();
        assert!((kd_loss(&b, &a, 1.0, &[0, 1]).unwrap() - kl).abs() < 1e-12);
        assert!(matches!(
            kd_loss(&a, &b, 0.0, &[0, 1]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            kd_loss(&a, &b, -1.0, &[0, 1]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ewc_penalty_scalar_case() {
        let mut teacher = logistic(1.0);
        teacher.layers[0].weights = vec![0.0, 1.0];
        let mut fisher = FisherDiagonal {
            layers: zeros_like(&teacher.layers),
        };
        fisher.layers[0].weights[1] = 2.0;
        let snap = TeacherSnapshot {
            model: teacher.clone(),
            fisher: Some(fisher),
        };
        assert_eq!(ewc_penalty(&teacher, &snap).unwrap(), 0.0);
        let moved = logistic(3.0);
        assert_eq!(ewc_penalty(&moved, &snap).unwrap(), 8.0);

        let other = init_model(&Architecture::new(vec![2, 2], Activation::Relu), 0).unwrap();
        assert!(matches!(ewc_penalty(&other, &snap), Err(Error::Shape(_))));
    }

    #[test]
    fn fisher_single_example_matches_hand_derivation() {
        let (w, x) = (0.7, 1.5);
        let m = logistic(w);
        let data = [Example::new(vec![x], 1)];
        let f = estimate_fisher(&m, &data, 1).unwrap();
        let p = 1.0 / (1.0 + (-w * x).exp());
        // d(-log p)/dw for row 1 is (p - 1) x; row 0 sees (1 - p) x
        let expected = (p - 1.0) * (p - 1.0) * x * x;
        assert!((f.layers[0].weights[1] - expected).abs() < 1e-14);
        assert!((f.layers[0].weights[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn fisher_is_order_invariant_and_duplicate_stable() {
        let m = init_model(&Architecture::new(vec![3, 5, 2], Activation::Tanh), 4).unwrap();
        let data: Vec<Example> = (0..9)
            .map(|i| {
                Example::new(
                    vec![i as f64 * 0.3 - 1.0, (i * i) as f64 * 0.05, 0.5],
                    i % 2,
                )
            })
            .collect();
        let f1 = estimate_fisher(&m, &data, data.len()).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        assert_eq!(f1, estimate_fisher(&m, &rev, rev.len()).unwrap());

        let doubled: Vec<Example> = data.iter().chain(&data).cloned().collect();
        let f2 = estimate_fisher(&m, &doubled, doubled.len()).unwrap();
        for (a, b) in f1.values().zip(f2.values()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
            assert!(a >= 0.0 && a.is_finite());
        }
    }

    #[test]
    fn saturated_model_has_near_zero_fisher() {
        let m = logistic(200.0);
        let f = estimate_fisher(&m, &[Example::new(vec![1.0], 1)], 1).unwrap();
        assert!(f.values().all(|v| v < 1e-100));
    }

    #[test]
    fn composite_needs_teacher_and_is_linear_in_lambda() {
        let teacher = init_model(&Architecture::new(vec![2, 4, 2], Activation::Relu), 1).unwrap();
        let mut student = teacher.clone();
        student.expand_head(&[2, 3]).unwrap();
        student.layers[0].weights[0] += 0.3;
        let snap = TeacherSnapshot {
            model: teacher.clone(),
            fisher: None,
        };
        let batch_owned = [
            Example::new(vec![0.5, -1.0], 2),
            Example::new(vec![1.5, 0.2], 0),
        ];
        let batch: Vec<&Example> = batch_owned.iter().collect();
        let spec = |lambda| LossSpec {
            strategy: Strategy::Lwf,
            lambda,
            temperature: 2.0,
            teacher: Some(&snap),
        };
        let l0 = composite_loss(&spec(0.0), &student, &batch).unwrap();
        let l1 = composite_loss(&spec(1.0), &student, &batch).unwrap();
        let l2 = composite_loss(&spec(2.0), &student, &batch).unwrap();
        assert_eq!(
            l0,
            composite_loss(&LossSpec::plain(), &student, &batch).unwrap()
        );
        let s = student
            .forward(&[
                batch_owned[0].features.clone(),
                batch_owned[1].features.clone(),
            ])
            .unwrap();
        let t = teacher
            .forward(&[
                batch_owned[0].features.clone(),
                batch_owned[1].features.clone(),
            ])
            .unwrap();
        let kd = kd_loss(&s, &t, 2.0, &[0, 1]).unwrap();
        assert!(((l2 - l1) - kd).abs() < 1e-12);

        let missing = LossSpec {
            teacher: None,
            ..spec(1.0)
        };
        assert!(matches!(
            composite_loss(&missing, &student, &batch),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let mut m = logistic(0.0);
        m.layers[0].weights = vec![-100.0, 100.0];
        let data = [Example::new(vec![1.0], 1)];
        let batch: Vec<&Example> = data.iter().collect();
        assert!(composite_loss(&LossSpec::plain(), &m, &batch).unwrap() < 1e-80);
    }

    #[test]
    fn wa_scales_new_rows_only() {
        let mut m = init_model(&Architecture::new(vec![2, 3, 4], Activation::Relu), 0).unwrap();
        m.head_mut().weights = vec![
            2.0, 0.0, 0.0, //
            0.0, 2.0, 0.0, //
            4.0, 0.0, 0.0, //
            0.0, 0.0, 4.0,
        ];
        let a = wa_align(&m, &[0, 1], &[2, 3]).unwrap();
        assert_eq!(a.head().row(2), &[2.0, 0.0, 0.0]);
        assert_eq!(a.head().row(0), m.head().row(0));
        assert_eq!(a.layers[0], m.layers[0]);
        assert_eq!(a.head().bias, m.head().bias);

        let mut zero = m.clone();
        zero.head_mut().row_mut(2).fill(0.0);
        zero.head_mut().row_mut(3).fill(0.0);
        assert!(matches!(
            wa_align(&zero, &[0, 1], &[2, 3]),
            Err(Error::Degenerate(_))
        ));
        assert!(wa_align(&m, &[], &[2]).is_err());
        assert!(wa_align(&m, &[0, 2], &[2]).is_err());
    }

    #[test]
    fn nme_nearest_and_ties() {
        let means = ClassMeans {
            means: BTreeMap::from([(3, vec![1.0, 0.0]), (5, vec![0.0, 1.0])]),
        };
        assert_eq!(means.nearest(&[2.0, 0.1]).unwrap(), 3);
        assert_eq!(means.nearest(&[0.0, 1.0]).unwrap(), 5);
        assert_eq!(means.nearest(&[1.0, 1.0]).unwrap(), 3);
        assert!(ClassMeans::default().nearest(&[1.0]).is_err());
    }

    #[test]
    fn nme_requires_every_class() {
        let m = init_model(&Architecture::new(vec![2, 3, 2], Activation::Relu), 0).unwrap();
        let means = ClassMeans {
            means: BTreeMap::from([(0, vec![1.0, 0.0, 0.0])]),
        };
        assert!(matches!(
            nme_classify(&m, &means, &[1.0, 1.0]),
            Err(Error::Validation(_))
        ));
    }
}
