//! Binary checkpoint format.
//!
//! ```text
//! "DSCN" | version: u16 | meta_len: u32 | meta: UTF-8 JSON
//! repeated: name_len: u32 | name | rank: u32 | dims: u32 * rank | payload: f32 * prod(dims)
//! crc32: u32 over every preceding byte
//! ```
//! All integers and floats are little-endian.

use super::model::{Model, ModelConfig, ParamGroup, NUM_GROUPS};
use super::NnError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"DSCN";
pub const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    #[serde(flatten)]
    config: ModelConfig,
    groups: [ParamGroup; NUM_GROUPS],
}

pub fn encode_checkpoint(model: &Model<f32>) -> Vec<u8> {
    let meta = serde_json::to_vec(&Meta {
        config: model.config.clone(),
        groups: model.groups,
    })
    .expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for t in model.tensors() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::MalformedCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model<f32>, NnError> {
    if bytes.len() < 4 + 2 + 4 + 4 {
        return Err(NnError::MalformedCheckpoint("file too short".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(NnError::ChecksumMismatch { stored, actual });
    }
    if &body[..4] != MAGIC {
        return Err(NnError::MalformedCheckpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes([body[4], body[5]]);
    if version != VERSION {
        return Err(NnError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let mut r = Reader { bytes: body, pos: 6 };
    let meta_len = r.u32()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| NnError::MalformedCheckpoint(format!("metadata: {e}")))?;

    let mut stored_tensors: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
    while r.pos < body.len() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| NnError::MalformedCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(NnError::MalformedCheckpoint(format!("tensor {name} has rank {rank}")));
        }
        let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_, _>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| NnError::MalformedCheckpoint(format!("tensor {name} too large")))?;
        let payload = r.take(count.checked_mul(4).ok_or_else(|| NnError::MalformedCheckpoint("overflow".into()))?)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if stored_tensors.insert(name.clone(), (dims, values)).is_some() {
            return Err(NnError::MalformedCheckpoint(format!("duplicate tensor {name}")));
        }
    }

    let mut model = Model::<f32>::build(&meta.config, 0)?;
    model.groups = meta.groups;
    let expected = model.tensors().len();
    if stored_tensors.len() != expected {
        return Err(NnError::MalformedCheckpoint(format!(
            "{} tensors stored, architecture has {expected}",
            stored_tensors.len()
        )));
    }
    for t in model.tensors_mut() {
        let (dims, values) = stored_tensors
            .remove(&t.name)
            .ok_or_else(|| NnError::MalformedCheckpoint(format!("missing tensor {}", t.name)))?;
        if dims != t.shape {
            return Err(NnError::MalformedCheckpoint(format!(
                "tensor {} has shape {dims:?}, expected {:?}",
                t.name, t.shape
            )));
        }
        t.data.copy_from_slice(&values);
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<(), NnError> {
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>, NnError> {
    let bytes = std::fs::read(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
