//! `IHNCKPT1` parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "IHNCKPT1"
//! manifest_len u64      byte length of the manifest that follows
//! manifest     count: u32, then per parameter:
//!                name_len: u32, name: UTF-8 bytes,
//!                dtype: u8 (0 = f32, 1 = f64),
//!                ndim: u32, dims: u64 * ndim,
//!                offset: u64 (from start of blob area), nbytes: u64
//! blobs        raw little-endian parameter data, in manifest order
//! ```

use super::{DType, ParamStore, Real, Tensor};
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Cursor, Read, Write};

pub const MAGIC: &[u8; 8] = b"IHNCKPT1";

/// One decoded parameter of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub bytes: Vec<u8>,
}

impl CheckpointEntry {
    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "{}: stored as {:?}, requested {:?}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        let data = self.bytes.chunks_exact(self.dtype.size()).map(T::read_le).collect();
        Tensor::new(&self.shape, data)
    }
}

pub fn write_checkpoint<T: Real, W: Write>(store: &ParamStore<T>, mut out: W) -> Result<()> {
    let mut manifest = Vec::new();
    manifest.write_u32::<LittleEndian>(store.len() as u32)?;
    let mut offset = 0u64;
    let mut blobs = Vec::new();
    for (name, t) in store.iter() {
        manifest.write_u32::<LittleEndian>(name.len() as u32)?;
        manifest.write_all(name.as_bytes())?;
        manifest.write_u8(T::DTYPE.tag())?;
        manifest.write_u32::<LittleEndian>(t.shape().len() as u32)?;
        for &d in t.shape() {
            manifest.write_u64::<LittleEndian>(d as u64)?;
        }
        let nbytes = (t.len() * T::DTYPE.size()) as u64;
        manifest.write_u64::<LittleEndian>(offset)?;
        manifest.write_u64::<LittleEndian>(nbytes)?;
        offset += nbytes;
        for &v in t.data() {
            v.write_le(&mut blobs);
        }
    }
    out.write_all(MAGIC)?;
    out.write_u64::<LittleEndian>(manifest.len() as u64)?;
    out.write_all(&manifest)?;
    out.write_all(&blobs)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<CheckpointEntry>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mlen = input.read_u64::<LittleEndian>()? as usize;
    let mut manifest = vec![0u8; mlen];
    input.read_exact(&mut manifest).map_err(|_| bad("truncated manifest"))?;
    let mut blobs = Vec::new();
    input.read_to_end(&mut blobs)?;

    let mut m = Cursor::new(manifest);
    let count = m.read_u32::<LittleEndian>()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = m.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; nlen];
        m.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("non-UTF-8 name"))?;
        let dtype = DType::from_tag(m.read_u8()?).ok_or_else(|| bad("unknown dtype"))?;
        let ndim = m.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(m.read_u64::<LittleEndian>()? as usize);
        }
        let offset = m.read_u64::<LittleEndian>()?;
        let nbytes = m.read_u64::<LittleEndian>()? as usize;
        let expect = shape.iter().product::<usize>() * dtype.size();
        if nbytes != expect {
            return Err(bad(&format!("{name}: {nbytes} bytes for shape {shape:?}")));
        }
        let start = offset as usize;
        let bytes = blobs
            .get(start..start + nbytes)
            .ok_or_else(|| bad(&format!("{name}: blob out of range")))?
            .to_vec();
        entries.push(CheckpointEntry {
            name,
            dtype,
            shape,
            offset,
            bytes,
        });
    }
    Ok(entries)
}

impl<T: Real> ParamStore<T> {
    /// Loads values from checkpoint entries into an identically-shaped store.
    /// Every parameter must be present with a matching shape.
    pub fn load_entries(&mut self, entries: &[CheckpointEntry]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                entries.len(),
                self.len()
            )));
        }
        for e in entries {
            let id = self
                .lookup(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", e.name)))?;
            if self.get(id).shape() != e.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{}: shape {:?} vs model {:?}",
                    e.name,
                    e.shape,
                    self.get(id).shape()
                )));
            }
            let t: Tensor<T> = e.to_tensor()?;
            self.set_data(id, t.into_data());
        }
        Ok(())
    }
}
