//! Checkpoint container.
//!
//! ```text
//! "MMCK"  u32 version (1)
//! u32 header length, header JSON { config, input_dims, has_critic }
//! u32 tensor count
//! per tensor: u32 name length, UTF-8 name, MMF-encoded f64 matrix
//! ```
//!
//! All integers are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MmclConfig, MmclModel};
use crate::data::mmf::{self, Dtype};
use crate::error::{MmclError, Result};

pub const MAGIC: &[u8; 4] = b"MMCK";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: MmclConfig,
    input_dims: [usize; 3],
    has_critic: bool,
}

fn bad(msg: impl Into<String>) -> MmclError {
    MmclError::Checkpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad(format!("length {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("truncated checkpoint"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn encode_checkpoint(model: &MmclModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let header = Header {
        config: model.config.clone(),
        input_dims: model.input_dims,
        has_critic: model.has_critic(),
    };
    let json = serde_json::to_vec(&header)?;
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, model.store.len())?;
    for (_, p) in model.store.iter() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&mmf::encode(&p.value, Dtype::F64)?);
    }
    Ok(out)
}

/// Parses a checkpoint into its header and named tensors.
fn parse(bytes: &[u8]) -> Result<(Header, Vec<(String, crate::diffcore::Tensor)>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)
        .map_err(|_| bad("file too short for a checkpoint"))?
        != MAGIC
    {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = r.u32()?;
    let header: Header =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| bad(format!("header: {e}")))?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let nlen = r.u32()?;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| bad("parameter name is not UTF-8"))?;
        let (t, _, used) = mmf::decode_prefix(&bytes[r.pos..])
            .map_err(|e| bad(format!("tensor '{name}': {e}")))?;
        r.pos += used;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((header, tensors))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MmclModel> {
    let (header, tensors) = parse(bytes)?;
    let mut model = MmclModel::build(header.config, header.input_dims, header.has_critic)?;
    if tensors.len() != model.store.len() {
        return Err(bad(format!(
            "checkpoint holds {} tensors, configuration needs {}",
            tensors.len(),
            model.store.len()
        )));
    }
    for (name, value) in tensors {
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| bad(format!("unexpected parameter '{name}'")))?;
        let slot = model.store.get_mut(id);
        if slot.shape() != value.shape() {
            return Err(bad(format!(
                "parameter '{name}' has shape {:?}, expected {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &MmclModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)?).map_err(|e| MmclError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MmclModel> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| MmclError::io(path, e))?)
}

/// Parameter names stored in a checkpoint file, in file order.
pub fn checkpoint_keys(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MmclError::io(path, e))?;
    Ok(parse(&bytes)?.1.into_iter().map(|(n, _)| n).collect())
}
