use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::params::{Layout, ModelDims, URformerConfig, URformerParams};
use crate::container::{Container, DType};
use crate::error::{Error, Result};
use crate::linops::ComplexMatrix;

pub const CHECKPOINT_KIND: &str = "urformer-checkpoint";

/// Training metadata stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    /// Validation NMSE (dB) of the stored parameters, if known.
    pub loss_db: Option<f64>,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: URformerParams,
    /// The `P x K` pilot matrix the model was trained with.
    pub pilots: ComplexMatrix,
    pub meta: CheckpointMeta,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint, dtype: DType) -> Result<()> {
    let p = &ckpt.params;
    if ckpt.pilots.shape() != (p.dims.num_pilots, p.dims.num_users) {
        return Err(Error::ShapeMismatch {
            op: "save_checkpoint",
            left: (p.dims.num_pilots, p.dims.num_users),
            right: ckpt.pilots.shape(),
        });
    }
    let metadata = json!({
        "config": p.config,
        "dims": p.dims,
        "training": ckpt.meta,
    });
    let mut c = Container::new(CHECKPOINT_KIND, metadata).with_dtype(dtype);
    for (spec, v) in p.layout.specs.iter().zip(&p.values) {
        c.push(spec.name.clone(), vec![spec.rows, spec.cols], v.clone())?;
    }
    let (r, k) = ckpt.pilots.shape();
    c.push("pilots.re", vec![r, k], ckpt.pilots.re().to_vec())?;
    c.push("pilots.im", vec![r, k], ckpt.pilots.im().to_vec())?;
    c.write(path)
}

fn field<T: serde::de::DeserializeOwned>(meta: &serde_json::Value, key: &str, path: &Path) -> Result<T> {
    serde_json::from_value(meta.get(key).cloned().unwrap_or(serde_json::Value::Null))
        .map_err(|e| Error::Format { path: path.to_path_buf(), reason: format!("{key}: {e}") })
}

/// Loads a checkpoint, checking every tensor against the stored config.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c = Container::read(path)?;
    if c.kind != CHECKPOINT_KIND {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected a {CHECKPOINT_KIND}, found {:?}", c.kind),
        });
    }
    let config: URformerConfig = field(&c.metadata, "config", path)?;
    let dims: ModelDims = field(&c.metadata, "dims", path)?;
    let meta: CheckpointMeta = field(&c.metadata, "training", path)?;
    let layout = Layout::new(&config, &dims)?;
    let values = layout
        .specs
        .iter()
        .map(|s| c.expect(&s.name, &[s.rows, s.cols]).map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let shape = [dims.num_pilots, dims.num_users];
    let pilots = ComplexMatrix::from_parts(
        dims.num_pilots,
        dims.num_users,
        c.expect("pilots.re", &shape)?.to_vec(),
        c.expect("pilots.im", &shape)?.to_vec(),
    )?;
    if c.len() != layout.specs.len() + 2 {
        return Err(Error::Incompatible(format!(
            "checkpoint holds {} tensors, config implies {}",
            c.len(),
            layout.specs.len() + 2
        )));
    }
    Ok(Checkpoint { params: URformerParams::from_values(&config, dims, values)?, pilots, meta })
}
