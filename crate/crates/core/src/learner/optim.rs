use serde::{Deserialize, Serialize};

use super::model::{tensors, tensors_mut, zeros_like, LayerTensors, ModelState};
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///
/// ```text
/// g' = g + wd * theta
/// v  = mu * v + g'
/// theta -= lr * v
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: LayerTensors,
}

impl OptimizerState {
    pub fn new(model: &ModelState, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: zeros_like(&model.layers),
        }
    }

    pub fn step(&mut self, model: &mut ModelState, grads: &LayerTensors) -> Result<()> {
        let shapes_match = model.layers.len() == grads.len()
            && self.velocity.len() == grads.len()
            && model
                .layers
                .iter()
                .zip(grads)
                .zip(&self.velocity)
                .all(|((p, g), v)| {
                    p.weights.len() == g.weights.len()
                        && p.bias.len() == g.bias.len()
                        && v.weights.len() == g.weights.len()
                        && v.bias.len() == g.bias.len()
                });
        if !shapes_match {
            return Err(Error::shape(
                "optimizer buffers do not match model parameters",
            ));
        }
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        for ((p, g), v) in tensors_mut(&mut model.layers)
            .zip(tensors(grads))
            .zip(tensors_mut(&mut self.velocity))
        {
            for ((theta, &grad), vel) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vel = mu * *vel + grad + wd * *theta;
                *theta -= lr * *vel;
            }
        }
        Ok(())
    }
}
