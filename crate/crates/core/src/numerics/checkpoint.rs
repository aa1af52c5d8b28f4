//! Binary tensor container used for checkpoints, datasets and style stores.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DI2S"            4-byte magic
//! u32               format version (currently 1)
//! repeated until EOF:
//!   u32             name length in bytes
//!   [u8]            UTF-8 name
//!   u8              dtype tag (1 = f32, 2 = f64)
//!   u32             rank
//!   u64 * rank      extents
//!   values          product(extents) little-endian scalars
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::ParameterSet;
use crate::numerics::tensor::Tensor;
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"DI2S";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<T: Scalar>(entries: &[(&str, &Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated while reading {what} at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes a container whose entries must all be stored as `T`. `path` is
/// only used in error messages.
pub fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    decode_inner(bytes, path, true)
}

/// Like [`decode`] but converts entries stored in another precision.
pub fn decode_converting<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    decode_inner(bytes, path, false)
}

fn decode_inner<T: Scalar>(bytes: &[u8], path: &Path, strict: bool) -> Result<Vec<(String, Tensor<T>)>> {
    let mut cur = Cursor {
        buf: bytes,
        pos: 0,
        path,
    };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::format(path, "bad magic (expected \"DI2S\")"));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format version {version} (this build reads {FORMAT_VERSION})"),
        ));
    }
    let mut entries = Vec::new();
    while cur.pos < bytes.len() {
        let n = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(n, "name")?)
            .map_err(|_| Error::format(path, "entry name is not UTF-8"))?
            .to_string();
        let tag = cur.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| Error::format(path, format!("`{name}`: unknown dtype tag {tag}")))?;
        if strict && dtype != T::DTYPE {
            return Err(Error::format(
                path,
                format!("`{name}`: stored as {dtype:?}, requested {:?}", T::DTYPE),
            ));
        }
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * dtype.size(), "values")?;
        let data = match dtype {
            d if d == T::DTYPE => raw.chunks_exact(d.size()).map(T::read_le).collect(),
            DType::F32 => raw.chunks_exact(4).map(|b| T::c(f32::read_le(b) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|b| T::c(f64::read_le(b))).collect(),
        };
        entries.push((name, Tensor::new(&shape, data)?));
    }
    Ok(entries)
}

pub fn write_tensors<T: Scalar>(path: &Path, entries: &[(&str, &Tensor<T>)]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_tensors<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Reads a container, converting stored precision to `T` when needed.
pub fn read_tensors_converting<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_converting(&bytes, path)
}

/// Looks up one entry by name.
pub fn find<'a, T>(entries: &'a [(String, Tensor<T>)], name: &str, path: &Path) -> Result<&'a Tensor<T>> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::format(path, format!("missing entry `{name}`")))
}

/// Version of the JSON sidecar written next to model checkpoints.
pub const SIDECAR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar<M> {
    format_version: u32,
    kind: String,
    meta: M,
}

/// Path of the JSON sidecar that describes the architecture of `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the parameters of a model to `path` and its architecture
/// description to the sidecar.
pub fn save_model<T: Scalar, M: Serialize>(path: &Path, kind: &str, ps: &ParameterSet<T>, meta: &M) -> Result<()> {
    write_tensors(path, &params_entries(ps))?;
    let json = sidecar_path(path);
    let sidecar = Sidecar {
        format_version: SIDECAR_VERSION,
        kind: kind.to_string(),
        meta,
    };
    fs::write(&json, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&json, e))
}

/// Reads the sidecar of `path`, checking its version and model kind.
pub fn load_model_meta<M: DeserializeOwned>(path: &Path, kind: &str) -> Result<M> {
    let json = sidecar_path(path);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: Sidecar<M> = serde_json::from_str(&text).map_err(|e| Error::format(&json, e.to_string()))?;
    if sidecar.format_version != SIDECAR_VERSION {
        return Err(Error::format(
            &json,
            format!("unsupported sidecar version {}", sidecar.format_version),
        ));
    }
    if sidecar.kind != kind {
        return Err(Error::format(&json, format!("expected a {kind} model, found {}", sidecar.kind)));
    }
    Ok(sidecar.meta)
}

/// Loads parameter values from `path` into `ps`, converting precision.
pub fn load_model_params<T: Scalar>(path: &Path, ps: &mut ParameterSet<T>) -> Result<()> {
    let entries = read_tensors_converting::<T>(path)?;
    load_into(ps, &entries, path)
}

/// Every parameter and buffer, in registration order.
pub fn params_entries<T: Scalar>(ps: &ParameterSet<T>) -> Vec<(&str, &Tensor<T>)> {
    ps.iter().map(|(_, p)| (p.name.as_str(), &p.value)).collect()
}

/// Overwrites every entry of `ps` from `entries`; extra entries are ignored.
pub fn load_into<T: Scalar>(
    ps: &mut ParameterSet<T>,
    entries: &[(String, Tensor<T>)],
    path: &Path,
) -> Result<()> {
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let name = ps.get(id).name.clone();
        let t = find(entries, &name, path)?;
        if t.shape() != ps.value(id).shape() {
            return Err(Error::format(
                path,
                format!(
                    "`{name}`: stored shape {:?}, model expects {:?}",
                    t.shape(),
                    ps.value(id).shape()
                ),
            ));
        }
        *ps.value_mut(id) = t.clone();
    }
    Ok(())
}
