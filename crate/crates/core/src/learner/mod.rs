//! A small dense network with exact backpropagation, SGD with momentum and a
//! classifier head that grows as classes arrive.

mod checkpoint;
mod gradcheck;
mod model;
mod optim;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, MIN_CHECKED_PARAMS};
pub(crate) use model::tensors;
pub use model::{
    init_model, zeros_like, Activation, Architecture, Dense, ForwardCache, LayerTensors, ModelState,
};
pub use optim::OptimizerState;
pub use train::{evaluate_accuracy, predict, train_epoch, EvalMode};
