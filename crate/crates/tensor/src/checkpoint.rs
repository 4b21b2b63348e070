//! Versioned binary container for named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"VPTC"
//! version  u32                      (currently 1)
//! n_meta   u32, then n_meta × { key: str, value: str }
//! n_tens   u32, then n_tens × { name: str, rank: u32, dims: rank × u64,
//!                               data: prod(dims) × f64 }
//! str      u32 byte length + UTF-8 bytes
//! ```
//!
//! Values are stored as raw IEEE-754 bit patterns, so a save/load round
//! trip is bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"VPTC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| TensorError::Format(format!("invalid UTF-8 string: {e}")))
}

impl Container {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (k, v) in &self.meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_str(w, name)?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Format("bad magic bytes".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(TensorError::Format(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..read_u32(r)? {
            let k = read_str(r)?;
            let v = read_str(r)?;
            meta.insert(k, v);
        }
        let n = read_u32(r)?;
        let mut tensors = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = read_str(r)?;
            let rank = read_u32(r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u64(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let mut bytes = vec![0u8; numel * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        Ok(Container { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

impl ParamStore {
    /// Every parameter and buffer, in registration order, under `prefix`.
    pub fn export(&self, prefix: &str, into: &mut Container) {
        for (_, p) in self.iter() {
            into.tensors.push((format!("{prefix}{}", p.name), p.value.clone()));
        }
    }

    /// Overwrites every entry from `from`. Fails without modifying the store
    /// when a name is missing or a shape differs.
    pub fn import(&mut self, prefix: &str, from: &Container) -> Result<()> {
        let mut staged = Vec::with_capacity(self.len());
        for (id, p) in self.iter() {
            let key = format!("{prefix}{}", p.name);
            let t = from
                .tensor(&key)
                .ok_or_else(|| TensorError::Format(format!("missing tensor `{key}`")))?;
            if t.shape() != p.value.shape() {
                return Err(TensorError::Format(format!(
                    "`{key}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            staged.push((id, t.clone()));
        }
        for (id, t) in staged {
            self.get_mut(id).value = t;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut c = Container::default();
        self.export("", &mut c);
        c.save(path)
    }

    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let c = Container::load(path)?;
        self.import("", &c)
    }
}
