use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{UdnArchitecture, UdnModel};
use crate::container;
use crate::error::{Error, Result};
use crate::real::{DType, Real};

/// Sidecar describing a checkpoint bundle. The bundle holds the fixed input
/// `z` followed by every weight tensor in forward-pass order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub architecture: UdnArchitecture,
    pub seed: u64,
    pub iteration: usize,
    pub dtype: DType,
    pub params: Vec<String>,
}

pub const WEIGHTS_FILE: &str = "weights.udnt";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn save_checkpoint<T: Real>(dir: impl AsRef<Path>, model: &UdnModel<T>, iteration: usize) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut tensors = vec![model.input().clone()];
    tensors.extend(model.params().iter().cloned());
    container::write_bundle(dir.join(WEIGHTS_FILE), &tensors)?;
    let manifest = Manifest {
        architecture: model.arch.clone(),
        seed: model.seed,
        iteration,
        dtype: T::DTYPE,
        params: model.param_names().to_vec(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(dir: impl AsRef<Path>) -> Result<(UdnModel<T>, Manifest)> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let mut tensors = container::read_bundle::<T>(dir.join(WEIGHTS_FILE))?.into_iter();
    let z = tensors
        .next()
        .ok_or_else(|| Error::Format("empty checkpoint bundle".into()))?;
    let model = UdnModel::from_parts(manifest.architecture.clone(), manifest.seed, tensors.collect(), z)?;
    if model.param_names() != manifest.params.as_slice() {
        return Err(Error::Format("checkpoint parameter names do not match".into()));
    }
    Ok((model, manifest))
}
