//! `WVCK` checkpoint files.
//!
//! Layout (little-endian): magic `WVCK`, u32 version, u32 block count, then
//! per block: u32 name length, name bytes (UTF-8), u32 rank, rank × u64 dims,
//! f64 payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One named array as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedBlock {
    pub fn scalar(name: &str, x: f64) -> Self {
        NamedBlock { name: name.to_string(), shape: Vec::new(), data: vec![x] }
    }
}

pub fn blocks_from_store(store: &ParamStore) -> Vec<NamedBlock> {
    store
        .blocks()
        .iter()
        .map(|b| NamedBlock { name: b.name.clone(), shape: b.shape.clone(), data: b.value.clone() })
        .collect()
}

pub fn encode_checkpoint(blocks: &[NamedBlock]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
        for d in &b.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for x in &b.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Vec<NamedBlock>> {
    let mut r = Reader { buf, pos: 0 };
    if r.bytes(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a WVCK checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let nl = r.u32()? as usize;
        let name = std::str::from_utf8(r.bytes(nl)?)
            .map_err(|_| Error::Format("block name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.bytes(n.checked_mul(8).ok_or_else(|| Error::Format("block too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        blocks.push(NamedBlock { name, shape, data });
    }
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(blocks)
}

/// Write via a temporary sibling and rename, so readers never see a partial file.
pub fn save_checkpoint(path: &Path, blocks: &[NamedBlock]) -> Result<()> {
    let bytes = encode_checkpoint(blocks);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<NamedBlock>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_checkpoint(&buf)
}

/// Copy stored values into matching blocks of `store`.
pub fn restore_store(store: &mut ParamStore, blocks: &[NamedBlock]) -> Result<()> {
    for i in 0..store.len() {
        let id = super::params::ParamId(i);
        let name = store.block(id).name.clone();
        let b = blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks block `{name}`")))?;
        if b.shape != store.block(id).shape {
            return Err(Error::ShapeMismatch(format!(
                "block `{name}`: checkpoint {:?}, model {:?}",
                b.shape,
                store.block(id).shape
            )));
        }
        store.value_mut(id).copy_from_slice(&b.data);
    }
    Ok(())
}

pub fn find_scalar(blocks: &[NamedBlock], name: &str) -> Result<f64> {
    blocks
        .iter()
        .find(|b| b.name == name && b.data.len() == 1)
        .map(|b| b.data[0])
        .ok_or_else(|| Error::Format(format!("checkpoint lacks scalar `{name}`")))
}
