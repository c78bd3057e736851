//! Binary container for named arrays: magic, `u32` format version, `u64`
//! header length, a JSON header, then the raw little-endian array data in
//! header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ModelConfig, ModelError, ModelParams};
use crate::nn::{Real, Tensor};

pub const MAGIC: &[u8; 8] = b"LFDBARCH";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    dtype: String,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

/// Named arrays plus free-form metadata, as read back from disk.
#[derive(Clone, Debug)]
pub struct Archive<T> {
    pub meta: Value,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T> Archive<T> {
    pub fn take(&mut self, name: &str) -> Result<Tensor<T>, ModelError> {
        let pos = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| ModelError::Format(format!("missing array `{name}`")))?;
        Ok(self.tensors.remove(pos).1)
    }
}

fn format_err(msg: impl Into<String>) -> ModelError {
    ModelError::Format(msg.into())
}

/// Write atomically: the data goes to a sibling temp file that is renamed
/// into place.
pub fn write_archive<T: Real>(
    path: &Path,
    kind: &str,
    meta: &Value,
    tensors: &[(String, &Tensor<T>)],
) -> Result<(), ModelError> {
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        dtype: T::DTYPE.to_string(),
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| format_err(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, t) in tensors {
        for &v in &t.data {
            v.write_le(&mut buf);
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp)?;
    file.write_all(&buf)?;
    file.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_archive<T: Real>(path: &Path, kind: &str) -> Result<Archive<T>, ModelError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(format_err(format!("{} is not an archive", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format_err(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes
        .get(20..20 + hlen)
        .ok_or_else(|| format_err("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| format_err(e.to_string()))?;
    if header.kind != kind {
        return Err(format_err(format!(
            "expected a {kind} archive, found {}",
            header.kind
        )));
    }
    if header.dtype != T::DTYPE {
        return Err(format_err(format!(
            "stored as {}, requested {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let width = std::mem::size_of::<T>();
    let mut offset = 20 + hlen;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let len: usize = entry.shape.iter().product();
        let raw = bytes
            .get(offset..offset + len * width)
            .ok_or_else(|| format_err(format!("array `{}` is truncated", entry.name)))?;
        let data = raw.chunks(width).map(T::read_le).collect();
        offset += len * width;
        tensors.push((entry.name, Tensor::from_vec(&entry.shape, data)));
    }
    if offset != bytes.len() {
        return Err(format_err("trailing bytes after the last array"));
    }
    Ok(Archive {
        meta: header.meta,
        tensors,
    })
}

/// First field where `stored` and `expected` differ, as a structured error.
pub fn compare_configs(stored: &ModelConfig, expected: &ModelConfig) -> Result<(), ModelError> {
    let (a, b) = (
        serde_json::to_value(stored).expect("config serializes"),
        serde_json::to_value(expected).expect("config serializes"),
    );
    let (Value::Object(a), Value::Object(b)) = (a, b) else {
        unreachable!("configs serialize as objects")
    };
    for (field, want) in &b {
        let have = a.get(field).cloned().unwrap_or(Value::Null);
        if &have != want {
            return Err(ModelError::ConfigMismatch {
                field: field.clone(),
                stored: have.to_string(),
                expected: want.to_string(),
            });
        }
    }
    Ok(())
}

pub fn save_model<T: Real>(
    path: &Path,
    cfg: &ModelConfig,
    params: &ModelParams<T>,
) -> Result<(), ModelError> {
    let meta = serde_json::json!({ "config": cfg });
    write_archive(path, "model", &meta, &params.named_tensors())
}

/// Load a model; with `expected` set, a differing stored config is rejected.
pub fn load_model<T: Real>(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<(ModelConfig, ModelParams<T>), ModelError> {
    let mut archive = read_archive::<T>(path, "model")?;
    let cfg: ModelConfig = serde_json::from_value(archive.meta["config"].clone())
        .map_err(|e| format_err(format!("config: {e}")))?;
    if let Some(expected) = expected {
        compare_configs(&cfg, expected)?;
    }
    let mut params = ModelParams::<T>::init(&cfg, 0)?;
    for (name, slot) in params.named_tensors_mut() {
        let t = archive.take(&name)?;
        if t.shape != slot.shape {
            return Err(ModelError::ShapeMismatch(format!(
                "{name}: stored {:?}, config implies {:?}",
                t.shape, slot.shape
            )));
        }
        *slot = t;
    }
    if let Some((name, _)) = archive.tensors.first() {
        return Err(format_err(format!("unexpected array `{name}`")));
    }
    Ok((cfg, params))
}
