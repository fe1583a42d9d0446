//! Versioned tensor container: magic, version, a JSON header, then the
//! raw little-endian tensor blocks in header order.
//!
//! ```text
//! b"AFDETCK\0" | u32 version | u64 header_len | header JSON | blocks…
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AFDETCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub section: String,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub kind: String,
    pub dtype: DType,
    pub iteration: u64,
    pub config_hash: String,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry<T> {
    pub section: String,
    pub name: String,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container<T> {
    pub kind: String,
    pub iteration: u64,
    pub config_hash: String,
    pub meta: serde_json::Value,
    pub entries: Vec<Entry<T>>,
}

impl<T: Real> Container<T> {
    pub fn new(kind: impl Into<String>) -> Self {
        Container {
            kind: kind.into(),
            iteration: 0,
            config_hash: String::new(),
            meta: serde_json::Value::Null,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, section: &str, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.push(Entry {
            section: section.to_string(),
            name: name.into(),
            tensor,
        });
    }

    pub fn section<'a>(&'a self, section: &'a str) -> impl Iterator<Item = &'a Entry<T>> + 'a {
        self.entries.iter().filter(move |e| e.section == section)
    }

    pub fn get(&self, section: &str, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.name == name)
            .map(|e| &e.tensor)
    }

    pub fn header(&self) -> ContainerHeader {
        ContainerHeader {
            kind: self.kind.clone(),
            dtype: T::DTYPE,
            iteration: self.iteration,
            config_hash: self.config_hash.clone(),
            meta: self.meta.clone(),
            tensors: self
                .entries
                .iter()
                .map(|e| TensorInfo {
                    section: e.section.clone(),
                    name: e.name.clone(),
                    shape: e.tensor.shape().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header always serializes");
        let body: usize = self.entries.iter().map(|e| e.tensor.len() * T::DTYPE.size_of()).sum();
        let mut out = Vec::with_capacity(20 + header.len() + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for e in &self.entries {
            for &v in e.tensor.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = read_header(bytes)?;
        if header.0.dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "container holds {:?} tensors, caller expects {:?}",
                header.0.dtype,
                T::DTYPE
            )));
        }
        let (header, mut offset) = header;
        let size = T::DTYPE.size_of();
        let mut entries = Vec::with_capacity(header.tensors.len());
        for info in header.tensors {
            let n: usize = info.shape.iter().product();
            let end = offset + n * size;
            let block = bytes
                .get(offset..end)
                .ok_or_else(|| Error::Format(format!("truncated data for tensor `{}`", info.name)))?;
            let data = block.chunks_exact(size).map(T::read_le).collect();
            entries.push(Entry {
                section: info.section,
                name: info.name,
                tensor: Tensor::from_vec(&info.shape, data)?,
            });
            offset = end;
        }
        if offset != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - offset)));
        }
        Ok(Container {
            kind: header.kind,
            iteration: header.iteration,
            config_hash: header.config_hash,
            meta: header.meta,
            entries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Parses the header and returns it with the offset of the first block.
pub fn read_header(bytes: &[u8]) -> Result<(ContainerHeader, usize)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a tensor container (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(20..20 + len)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header = serde_json::from_slice(json).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    Ok((header, 20 + len))
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
