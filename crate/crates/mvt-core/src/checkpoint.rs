//! Checkpoint container: `MVTC` magic, format version, config JSON, named
//! parameter tensors, and a trailing SHA-256 over everything before it.
//! All integers little-endian.
//!
//! Layout:
//!   magic "MVTC" | u32 version | u32 config_len | config JSON
//!   | u32 entry_count | entries | 32-byte SHA-256
//! entry:
//!   u32 name_len | name UTF-8 | u8 dtype_tag | u32 ndim | u32 extents...
//!   | raw element bytes

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::element::{Dtype, Element};
use crate::error::{CoreError, Result};
use crate::model::MVTConfig;
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MVTC";
const VERSION: u32 = 1;

pub fn save_checkpoint<T: Element>(
    path: &Path,
    config: &MVTConfig,
    store: &ParamStore<T>,
) -> Result<()> {
    let config_json = serde_json::to_vec(config)
        .map_err(|e| CoreError::Format(format!("config serialization failed: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config_json);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(T::DTYPE.tag());
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &e in tensor.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            v.append_le_bytes(&mut buf);
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    std::fs::write(path, &buf).map_err(|e| CoreError::io(path.display().to_string(), e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CoreError::Format(format!(
                "checkpoint truncated: need {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<(MVTConfig, ParamStore<T>)> {
    let bytes =
        std::fs::read(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    if bytes.len() < 32 {
        return Err(CoreError::Format(
            "checkpoint shorter than its checksum".into(),
        ));
    }
    let (payload, stored_digest) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(payload);
    if digest.as_slice() != stored_digest {
        return Err(CoreError::Format("checkpoint checksum mismatch".into()));
    }
    let mut cur = Cursor {
        buf: payload,
        pos: 0,
    };
    if cur.take(4)? != MAGIC {
        return Err(CoreError::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CoreError::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let config_len = cur.u32()? as usize;
    let config: MVTConfig = serde_json::from_slice(cur.take(config_len)?)
        .map_err(|e| CoreError::Format(format!("bad checkpoint config: {e}")))?;
    let count = cur.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| CoreError::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let tag = cur.u8()?;
        let dtype = Dtype::from_tag(tag)
            .ok_or_else(|| CoreError::Format(format!("unknown dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(CoreError::Format(format!(
                "checkpoint stores {} but {} was requested",
                dtype.name(),
                T::DTYPE.name()
            )));
        }
        let ndim = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let width = dtype.byte_width();
        let raw = cur.take(numel * width)?;
        let data = raw.chunks_exact(width).map(T::from_le_slice).collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    if cur.pos != payload.len() {
        return Err(CoreError::Format(format!(
            "checkpoint has {} trailing bytes after last entry",
            payload.len() - cur.pos
        )));
    }
    Ok((config, store))
}
