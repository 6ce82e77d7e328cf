//! Model checkpoint container: little-endian binary with a magic string, a
//! format version, a JSON architecture header, then raw 32-bit parameter
//! payloads in header order. Loading then saving reproduces the bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SENH";
const FORMAT_VERSION: u32 = 1;

/// Network topology descriptor; the parameter list must validate against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Pix2Pix {
        side: usize,
        channel_base: usize,
        channel_cap: usize,
    },
    DnnSe {
        input_dim: usize,
        hidden_dim: usize,
        hidden_layers: usize,
        output_dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture: Architecture,
    train_seed: u64,
    /// Global magnitude normalization scale (spectrogram models).
    norm_scale: Option<f64>,
    /// Echo of the resolved training configuration.
    config: BTreeMap<String, String>,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Serialized network: topology + named weights + normalization constants +
/// the seed that trained it.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub architecture: Architecture,
    pub train_seed: u64,
    pub norm_scale: Option<f64>,
    pub config: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl ModelCheckpoint {
    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = Header {
            format_version: FORMAT_VERSION,
            architecture: self.architecture.clone(),
            train_seed: self.train_seed,
            norm_scale: self.norm_scale,
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorInfo {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        for t in &self.tensors {
            let expect: usize = t.shape.iter().product();
            assert_eq!(t.data.len(), expect, "tensor {} payload size", t.name);
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
        let path = path.as_ref();
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

        if bytes.len() < 12 || &bytes[0..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() < 12 + json_len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[12..12 + json_len])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

        let mut pos = 12 + json_len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in &header.tensors {
            let numel: usize = info.shape.iter().product();
            let end = pos + numel * 4;
            if end > bytes.len() {
                return Err(Error::Checkpoint(format!(
                    "truncated payload for {:?}",
                    info.name
                )));
            }
            let data = bytes[pos..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push(NamedTensor {
                name: info.name.clone(),
                shape: info.shape.clone(),
                data,
            });
            pos = end;
        }
        if pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after payload".into()));
        }
        Ok(ModelCheckpoint {
            architecture: header.architecture,
            train_seed: header.train_seed,
            norm_scale: header.norm_scale,
            config: header.config,
            tensors,
        })
    }
}
