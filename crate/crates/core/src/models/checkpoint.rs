//! Weight files: one text line giving the header length, a TOML header
//! (free-form `meta` table plus tensor names and shapes), then all tensors
//! as little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::{build, ChannelNorm, Model, ModelSpec};

const MAGIC: &str = "hyperseg-tensors v1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: toml::Table,
    tensors: Vec<TensorEntry>,
}

/// Named tensors plus metadata, stored in the weight file format.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub meta: toml::Table,
    pub tensors: Vec<(String, Tensor)>,
}

impl TensorFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Parse(e.to_string()))?;
        let mut out = format!("{MAGIC} header_bytes={}\n", text.len()).into_bytes();
        out.extend_from_slice(text.as_bytes());
        for (_, t) in &self.tensors {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let malformed = |reason: String| Error::MalformedHeader {
            path: origin.to_path_buf(),
            reason,
        };
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| malformed("missing first line".into()))?;
        let first = std::str::from_utf8(&bytes[..newline]).map_err(|e| malformed(e.to_string()))?;
        let len = first
            .strip_prefix(MAGIC)
            .and_then(|rest| rest.trim().strip_prefix("header_bytes="))
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| malformed(format!("bad first line {first:?}")))?;
        let header_end = newline + 1 + len;
        if bytes.len() < header_end {
            return Err(malformed("truncated header".into()));
        }
        let text = std::str::from_utf8(&bytes[newline + 1..header_end]).map_err(|e| malformed(e.to_string()))?;
        let header: Header = toml::from_str(text).map_err(|e| malformed(e.to_string()))?;

        let payload = &bytes[header_end..];
        let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 4).sum();
        if payload.len() != expected {
            return Err(Error::SizeMismatch {
                path: origin.to_path_buf(),
                expected: expected as u64,
                found: payload.len() as u64,
            });
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let data = payload[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            offset += 4 * n;
            tensors.push((entry.name, Tensor::new(&entry.shape, data)?));
        }
        Ok(TensorFile {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    experiment: String,
    bands: String,
    epoch: usize,
    class_names: Vec<String>,
    spec: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_norm: Option<ChannelNorm>,
}

/// A trained model together with the data configuration it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub experiment: String,
    /// Band strategy in its CLI form (`all`, `uniform:7`, ...).
    pub bands: String,
    pub epoch: usize,
    pub class_names: Vec<String>,
    pub model: Model,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            kind: "model".into(),
            experiment: self.experiment.clone(),
            bands: self.bands.clone(),
            epoch: self.epoch,
            class_names: self.class_names.clone(),
            spec: self.model.spec().clone(),
            input_norm: self.model.input_norm().cloned(),
        };
        let meta = toml::Table::try_from(&meta).map_err(|e| Error::Parse(e.to_string()))?;
        TensorFile {
            meta,
            tensors: self
                .model
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
        .save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = TensorFile::load(path)?;
        let meta: CheckpointMeta = file
            .meta
            .try_into()
            .map_err(|e: toml::de::Error| Error::MalformedHeader {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        if meta.kind != "model" {
            return Err(Error::Validation(format!("{} is not a model checkpoint", path.display())));
        }
        let mut model = build(&meta.spec, 0)?;
        model.load_params(file.tensors)?;
        model.set_input_norm(meta.input_norm)?;
        Ok(Checkpoint {
            experiment: meta.experiment,
            bands: meta.bands,
            epoch: meta.epoch,
            class_names: meta.class_names,
            model,
        })
    }
}
