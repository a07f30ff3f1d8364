//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `FLCK`, u32 version, u32 + JSON config,
//! u32 + JSON metadata, u32 parameter count, then per parameter u16 name
//! length, name, u8 rank, u32 dims, f32 data. An optional optimizer section
//! follows (u8 flag, u64 step, per parameter first then second moments in
//! name order). The last 32 bytes are the SHA-256 of everything before.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{ArchError, ModelConfig, ModelState};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FLCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_RANK: usize = 6;
const MAX_ELEMENTS: u64 = 1 << 28;

/// Adaptive-moment optimizer state keyed like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: BTreeMap<String, Vec<f32>>,
    pub second: BTreeMap<String, Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: ModelState,
    pub optimizer: Option<OptimizerState>,
    /// Free-form JSON (training progress, plan fingerprint).
    pub meta: String,
}

fn err(m: impl Into<String>) -> ArchError {
    ArchError::Checkpoint(m.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| err(format!("truncated at byte {} (need {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ArchError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ArchError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32, ArchError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64, ArchError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn str(&mut self, len: usize) -> Result<&'a str, ArchError> {
        let at = self.pos;
        std::str::from_utf8(self.take(len)?).map_err(|_| err(format!("invalid UTF-8 at byte {at}")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>, ArchError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| err("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect())
    }
}

fn put_floats(out: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn new(state: ModelState) -> Self {
        Self {
            state,
            optimizer: None,
            meta: "{}".into(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for text in [serde_json::to_string(self.state.config()).expect("configs serialize"), self.meta.clone()] {
            out.extend_from_slice(&(text.len() as u32).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        let params = self.state.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_floats(&mut out, t.data());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                for name in params.keys() {
                    put_floats(&mut out, &o.first[name]);
                    put_floats(&mut out, &o.second[name]);
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchError> {
        if bytes.len() < 4 + 32 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(err("bad magic at byte 0"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(err("digest mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let config: ModelConfig =
            serde_json::from_str(r.str(len)?).map_err(|e| err(format!("config: {e}")))?;
        config.validate()?;
        let len = r.u32()? as usize;
        let meta = r.str(len)?.to_string();
        let count = r.u32()? as usize;
        let expected = config.parameter_shapes();
        if count != expected.len() {
            return Err(err(format!("{count} parameters, config implies {}", expected.len())));
        }
        let mut params = BTreeMap::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = r.str(len)?.to_string();
            let rank = r.u8()? as usize;
            if rank > MAX_RANK {
                return Err(err(format!("rank {rank} of {name}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut total = 1u64;
            for _ in 0..rank {
                let d = r.u32()?;
                total = total.saturating_mul(d as u64);
                shape.push(d as usize);
            }
            if total > MAX_ELEMENTS {
                return Err(err(format!("{name} has {total} elements")));
            }
            let data = r.floats(total as usize)?;
            let t = Tensor::from_vec(shape, data).map_err(|e| err(e.to_string()))?;
            if params.insert(name.clone(), t).is_some() {
                return Err(err(format!("duplicate parameter {name}")));
            }
        }
        let state = ModelState::from_parts(config, params)?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut first = BTreeMap::new();
                let mut second = BTreeMap::new();
                for (name, t) in state.params() {
                    first.insert(name.clone(), r.floats(t.numel())?);
                    second.insert(name.clone(), r.floats(t.numel())?);
                }
                Some(OptimizerState { step, first, second })
            }
            f => return Err(err(format!("optimizer flag {f} at byte {}", r.pos - 1))),
        };
        if r.pos != body.len() {
            return Err(err(format!("trailing data at byte {}", r.pos)));
        }
        Ok(Self { state, optimizer, meta })
    }
}
