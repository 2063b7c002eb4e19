//! Flat named-tensor checkpoints.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! b"HIMOECK1"  u32 count
//! count x { u32 name_len, name (utf-8), u32 ndim, ndim x u64 dim, prod(dim) x f64 }
//! ```
//!
//! A text index (`<file>.index`) lists `name<TAB>shape<TAB>byte offset of
//! the data` per tensor for inspection; it is not needed to load.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HIMOECK1";

pub fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".index");
    PathBuf::from(s)
}

pub fn encode(params: &ParamSet) -> (Vec<u8>, String) {
    let mut out = Vec::new();
    let mut index = String::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        index.push_str(&format!("{name}\t{}\t{}\n", shape.join("x"), out.len()));
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    (out, index)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format(path, "tensor name is not utf-8"))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| r.u64().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok(out)
}

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    let (bytes, index) = encode(params);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let idx = index_path(path);
    std::fs::write(&idx, index).map_err(|e| Error::io(&idx, e))
}

/// Loads `path` into `params`, which must already hold tensors with the
/// same names and shapes (normally a freshly built model).
pub fn load_into(params: &mut ParamSet, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = decode(&bytes, path)?;
    if tensors.len() != params.len() {
        return Err(Error::format(
            path,
            format!("checkpoint has {} tensors, model expects {}", tensors.len(), params.len()),
        ));
    }
    for (name, t) in tensors {
        let id = params
            .id(&name)
            .ok_or_else(|| Error::format(path, format!("unknown tensor `{name}`")))?;
        if params.get(id).shape() != t.shape() {
            return Err(Error::format(
                path,
                format!("`{name}` has shape {:?}, model expects {:?}", t.shape(), params.get(id).shape()),
            ));
        }
        *params.get_mut(id) = t;
    }
    Ok(())
}
