//! Binary checkpoint container: `SIMRODCK`, a little-endian `u32` format
//! version, a `u64` header length, a JSON header, then every tensor's
//! values as little-endian `f64` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Detector;
use super::params::{ModelParams, ParamTag, ParamTensor};
use super::DetectorConfig;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SIMRODCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_ap50: Option<f64>,
    pub label: String,
}

#[derive(Serialize, Deserialize)]
struct TensorDesc {
    name: String,
    tag: ParamTag,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: DetectorConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorDesc>,
}

pub fn to_bytes(det: &Detector, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let header = Header {
        config: det.config.clone(),
        meta: meta.clone(),
        tensors: det
            .params
            .tensors()
            .iter()
            .map(|t| TensorDesc {
                name: t.name.clone(),
                tag: t.tag,
                shape: t.shape.clone(),
                trainable: t.trainable(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * det.params.n_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in det.params.tensors() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<(Detector, CheckpointMeta)> {
    let bad = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    let mut data = &bytes[20 + hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for d in header.tensors {
        let n: usize = d.shape.iter().product();
        if data.len() < 8 * n {
            return Err(bad(format!("truncated data for '{}'", d.name)));
        }
        let values = data[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        data = &data[8 * n..];
        tensors.push((ParamTensor::new(d.name, d.tag, d.shape, values), d.trainable));
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    let flags: Vec<(String, bool)> = tensors.iter().map(|(t, f)| (t.name.clone(), *f)).collect();
    let mut params = ModelParams::new(tensors.into_iter().map(|(t, _)| t).collect())?;
    for (name, trainable) in flags {
        if params.by_name(&name).map(|t| t.tag) != Some(ParamTag::BnRunning) {
            params.set_trainable(&name, trainable)?;
        }
    }
    let det = Detector::from_params(header.config, params).map_err(|e| bad(e.to_string()))?;
    Ok((det, header.meta))
}

pub fn save_checkpoint(det: &Detector, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes = to_bytes(det, meta)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Detector, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
