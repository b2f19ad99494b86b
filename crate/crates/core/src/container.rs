//! Binary container shared by datasets and checkpoints.
//!
//! Layout: 8 magic bytes, a little-endian `u64` manifest length, the JSON
//! manifest, then every tensor payload back to back in little-endian order.
//! The manifest records each tensor's name, shape, element type and byte
//! offset into the payload region.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RAQRCNT\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    F32,
}

impl DType {
    pub fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    /// Byte offset from the start of the payload region.
    pub offset: u64,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// What the file holds (`"dataset"`, `"checkpoint"`).
    pub kind: String,
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// In-memory contents of a container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub metadata: serde_json::Value,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    data: Vec<Vec<f64>>,
    pub dtype: DType,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

impl Container {
    pub fn new(kind: impl Into<String>, metadata: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            metadata,
            names: Vec::new(),
            shapes: Vec::new(),
            data: Vec::new(),
            dtype: DType::F64,
        }
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(
                "container.push",
                format!("tensor {name}: shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        if self.names.contains(&name) {
            return Err(Error::invalid("container.push", format!("duplicate tensor {name}")));
        }
        self.names.push(name);
        self.shapes.push(shape);
        self.data.push(data);
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f64])> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((&self.shapes[i], &self.data[i]))
    }

    /// Tensor `name`, checked against `shape`.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let (found, data) = self
            .get(name)
            .ok_or_else(|| Error::Incompatible(format!("missing tensor {name}")))?;
        if found != shape {
            return Err(Error::Incompatible(format!(
                "tensor {name} has shape {found:?}, expected {shape:?}"
            )));
        }
        Ok(data)
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0u64;
        let tensors = self
            .names
            .iter()
            .zip(&self.shapes)
            .map(|(name, shape)| {
                let entry = TensorEntry { name: name.clone(), shape: shape.clone(), dtype: self.dtype, offset };
                offset += (entry.len() * self.dtype.width()) as u64;
                entry
            })
            .collect();
        Manifest { version: FORMAT_VERSION, kind: self.kind.clone(), metadata: self.metadata.clone(), tensors }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest())
            .map_err(|e| Error::invalid("container.to_bytes", e.to_string()))?;
        let payload: usize = self.data.iter().map(|d| d.len() * self.dtype.width()).sum();
        let mut out = Vec::with_capacity(16 + manifest.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for tensor in &self.data {
            match self.dtype {
                DType::F64 => tensor.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                DType::F32 => tensor.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
            }
        }
        Ok(out)
    }

    /// Reads only the manifest.
    pub fn read_manifest(path: &Path) -> Result<Manifest> {
        let bytes = read_file(path)?;
        Ok(split(&bytes, path)?.0)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (manifest, payload) = split(bytes, path)?;
        if manifest.version != FORMAT_VERSION {
            return Err(format_err(path, format!("unsupported version {}", manifest.version)));
        }
        let dtype = manifest.tensors.first().map_or(DType::F64, |t| t.dtype);
        let mut out = Container::new(manifest.kind, manifest.metadata).with_dtype(dtype);
        for entry in manifest.tensors {
            let start = entry.offset as usize;
            let end = start + entry.len() * entry.dtype.width();
            let raw = payload
                .get(start..end)
                .ok_or_else(|| format_err(path, format!("tensor {} runs past end of file", entry.name)))?;
            let values = match entry.dtype {
                DType::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                DType::F32 => {
                    raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
                }
            };
            out.push(entry.name, entry.shape, values).map_err(|e| format_err(path, e.to_string()))?;
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let io = |source| Error::Io { path: path.to_path_buf(), source };
        let mut file = fs::File::create(path).map_err(io)?;
        file.write_all(&bytes).map_err(io)?;
        file.sync_all().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn split<'a>(bytes: &'a [u8], path: &Path) -> Result<(Manifest, &'a [u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(format_err(path, "not a container file (bad magic)"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| format_err(path, "truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(body).map_err(|e| format_err(path, format!("manifest: {e}")))?;
    Ok((manifest, &bytes[16 + len..]))
}
