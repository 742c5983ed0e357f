use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ModelState;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: ModelState,
}

/// Writes a JSON checkpoint. Floats are emitted in shortest round-trip form,
/// so reading it back reproduces every parameter bit for bit.
pub fn write_checkpoint(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    let text = serde_json::to_string(&body).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::config(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            ck.version
        )));
    }
    let m = ck.model;
    let consistent = !m.layers.is_empty()
        && m.layers
            .iter()
            .all(|l| l.weights.len() == l.in_dim * l.out_dim && l.bias.len() == l.out_dim)
        && m.layers.windows(2).all(|w| w[0].out_dim == w[1].in_dim)
        && m.head().out_dim == m.head_labels.len();
    if !consistent {
        return Err(Error::shape(format!(
            "checkpoint {} has inconsistent layer shapes",
            path.display()
        )));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{init_model, Activation, Architecture};

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let mut m = init_model(&Architecture::new(vec![5, 7, 3], Activation::Tanh), 42).unwrap();
        m.layers[0].weights[0] = 0.1 + 0.2;
        m.layers[0].weights[1] = f64::MIN_POSITIVE;
        write_checkpoint(&m, &p).unwrap();
        assert_eq!(read_checkpoint(&p).unwrap(), m);
    }
}
