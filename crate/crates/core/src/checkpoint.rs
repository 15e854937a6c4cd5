//! Named-tensor archives (safetensors layout) with a JSON descriptor.
//!
//! Every tensor of a [`Params`] buffer is stored under its own name; the
//! architecture and settings needed to rebuild the network go into the
//! `config` metadata entry.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::Params;

const CONFIG_KEY: &str = "config";

fn ckpt_err(path: &Path, detail: impl ToString) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

pub fn save<M: Serialize>(path: &Path, params: &Params, descriptor: &M) -> Result<()> {
    let bytes: Vec<Vec<u8>> = params
        .specs()
        .iter()
        .map(|s| {
            params.data[s.offset..s.offset + s.len()]
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect()
        })
        .collect();
    let views = params
        .specs()
        .iter()
        .zip(&bytes)
        .map(|(s, b)| {
            TensorView::new(Dtype::F32, s.shape.clone(), b)
                .map(|v| (s.name.clone(), v))
                .map_err(|e| ckpt_err(path, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let json = serde_json::to_string(descriptor).map_err(|e| ckpt_err(path, e))?;
    let meta = Some(HashMap::from([(CONFIG_KEY.to_string(), json)]));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    safetensors::serialize_to_file(views, &meta, path).map_err(|e| ckpt_err(path, e))
}

/// Reads the descriptor, then hands it to `build` to construct an empty
/// network whose parameters are filled (and shape-checked) from the archive.
pub fn load<M, T, F>(path: &Path, build: F) -> Result<T>
where
    M: DeserializeOwned,
    F: FnOnce(M) -> Result<(T, Params)>,
    T: HasParams,
{
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = SafeTensors::read_metadata(&raw).map_err(|e| ckpt_err(path, e))?;
    let json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(CONFIG_KEY))
        .ok_or_else(|| ckpt_err(path, "missing config metadata"))?;
    let descriptor: M = serde_json::from_str(json).map_err(|e| ckpt_err(path, e))?;
    let (mut model, mut params) = build(descriptor)?;
    let st = SafeTensors::deserialize(&raw).map_err(|e| ckpt_err(path, e))?;
    let mut tensors = Vec::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(ckpt_err(path, format!("tensor {name} is not f32")));
        }
        let values: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push((name, view.shape().to_vec(), values));
    }
    params
        .load_named(tensors.iter().map(|(n, s, v)| (n.as_str(), s.as_slice(), v.clone())))
        .map_err(|e| ckpt_err(path, e))?;
    model.set_params(params);
    Ok(model)
}

/// Networks whose parameters can be replaced wholesale after loading.
pub trait HasParams {
    fn set_params(&mut self, params: Params);
}
