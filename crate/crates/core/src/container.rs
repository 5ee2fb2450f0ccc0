//! Versioned self-describing binary container for checkpoints and the
//! serialized environment.
//!
//! Layout (all integers little-endian):
//! `magic "NPSP1" | u32 version | str kind | u32 n_meta | (str, str)... |
//!  u32 n_arrays | (str name, u32 ndim, u64 dims...)... | f64 payloads...`
//! The shape table fully determines the payload byte length; loaders
//! reject truncated files, trailing bytes, and unknown versions.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::report::atomic_write;

pub const MAGIC: &[u8; 5] = b"NPSP1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Container {
    pub kind: String,
    pub metadata: Vec<(String, String)>,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn required_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing metadata key '{key}'")))
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing array '{name}'")))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Serialize and write atomically.
pub fn write_container(path: &Path, container: &Container) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, &container.kind);
    out.extend_from_slice(&(container.metadata.len() as u32).to_le_bytes());
    for (k, v) in &container.metadata {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    out.extend_from_slice(&(container.arrays.len() as u32).to_le_bytes());
    for a in &container.arrays {
        let n: usize = a.shape.iter().product();
        assert_eq!(n, a.data.len(), "array '{}' shape/payload mismatch", a.name);
        put_str(&mut out, &a.name);
        out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
        for d in &a.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
    }
    for a in &container.arrays {
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &out)
}

struct Cursor<R: Read> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::CorruptCheckpoint("truncated file".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > 1 << 20 {
            return Err(Error::CorruptCheckpoint(format!(
                "implausible string length {n}"
            )));
        }
        String::from_utf8(self.bytes(n)?)
            .map_err(|_| Error::CorruptCheckpoint("non-utf8 string".into()))
    }
}

pub fn read_container(path: &Path) -> Result<Container> {
    let file = File::open(path).map_err(|e| {
        Error::CorruptCheckpoint(format!("cannot open {}: {e}", path.display()))
    })?;
    let mut c = Cursor {
        inner: BufReader::new(file),
    };
    let magic = c.bytes(5)?;
    if magic != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported container version {version} (expected {VERSION})"
        )));
    }
    let kind = c.str()?;
    let n_meta = c.u32()? as usize;
    let mut metadata = Vec::with_capacity(n_meta.min(1024));
    for _ in 0..n_meta {
        let k = c.str()?;
        let v = c.str()?;
        metadata.push((k, v));
    }
    let n_arrays = c.u32()? as usize;
    let mut headers = Vec::with_capacity(n_arrays.min(1024));
    for _ in 0..n_arrays {
        let name = c.str()?;
        let ndim = c.u32()? as usize;
        if ndim > 8 {
            return Err(Error::CorruptCheckpoint(format!(
                "array '{name}' has implausible rank {ndim}"
            )));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u64()? as usize);
        }
        headers.push((name, shape));
    }
    let mut arrays = Vec::with_capacity(headers.len());
    for (name, shape) in headers {
        let n: usize = shape.iter().product();
        if n > (1 << 28) {
            return Err(Error::CorruptCheckpoint(format!(
                "array '{name}' has implausible size {n}"
            )));
        }
        let raw = c.bytes(8 * n)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        arrays.push(NamedArray { name, shape, data });
    }
    // The shape table must account for the whole payload.
    let mut probe = [0u8; 1];
    match c.inner.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::CorruptCheckpoint(
                "trailing bytes after declared payload".into(),
            ))
        }
        Err(e) => return Err(Error::Io(e)),
    }
    Ok(Container {
        kind,
        metadata,
        arrays,
    })
}
