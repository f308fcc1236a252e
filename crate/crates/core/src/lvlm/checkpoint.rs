//! Binary checkpoint format.
//!
//! ```text
//! "VIFT" | u32 version
//! u32 d_model | u32 n_layers | u32 n_heads | u32 vocab_size | u32 max_positions
//! u32 patch_grid | u32 d_vision | u8 tied_head | u64 seed
//! u32 n_params, then per parameter:
//!     u16 name_len | name (utf-8) | u8 ndim | u32 dims[ndim] | f32 data[numel]
//! u8 has_optim, then if set:
//!     u64 step | f32 m[numel] per parameter | f32 v[numel] per parameter
//! ```
//!
//! All integers and reals are little-endian. Trailing bytes are rejected.

use std::path::Path;

use super::{Lvlm, LvlmError, ModelConfig};
use crate::corpus::write_atomic;
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VIFT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Adaptive-moment optimizer state in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimSnapshot {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Lvlm<f32>,
    pub optim: Option<OptimSnapshot>,
}

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &Lvlm<f32>, optim: Option<&OptimSnapshot>) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(64 + model.params().total_numel() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for x in [cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.vocab_size, cfg.max_positions, cfg.patch_grid, cfg.d_vision] {
        put_u32(&mut out, x);
    }
    out.push(cfg.tied_head as u8);
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    put_u32(&mut out, model.params().len());
    for p in model.params().iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            put_u32(&mut out, d);
        }
        put_f32s(&mut out, &p.value);
    }
    match optim {
        Some(o) => {
            out.push(1);
            out.extend_from_slice(&o.step.to_le_bytes());
            for m in &o.m {
                put_f32s(&mut out, m);
            }
            for v in &o.v {
                put_f32s(&mut out, v);
            }
        }
        None => out.push(0),
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LvlmError> {
        if self.bytes.len() - self.pos < n {
            return Err(LvlmError::CorruptCheckpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, LvlmError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, LvlmError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, LvlmError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, LvlmError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, LvlmError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| LvlmError::CorruptCheckpoint("size overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, LvlmError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(LvlmError::CorruptCheckpoint("missing VIFT magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(LvlmError::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let tied_head = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(LvlmError::CorruptCheckpoint(format!("tied_head flag {b}"))),
    };
    let cfg = ModelConfig {
        d_model: dims[0],
        n_layers: dims[1],
        n_heads: dims[2],
        vocab_size: dims[3],
        max_positions: dims[4],
        patch_grid: dims[5],
        d_vision: dims[6],
        tied_head,
        seed: r.u64()?,
    };
    let n_params = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n_params {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| LvlmError::CorruptCheckpoint("parameter name is not utf-8".into()))?
            .to_string();
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| LvlmError::CorruptCheckpoint(format!("{name}: shape overflow")))?;
        let data = r.f32s(numel)?;
        params.push(name, Tensor::new(shape, data)?);
    }
    let model = Lvlm::from_params(cfg, params)
        .map_err(|e| LvlmError::CorruptCheckpoint(format!("parameters do not match header: {e}")))?;
    let optim = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let sizes: Vec<usize> = model.params().iter().map(|p| p.numel()).collect();
            let m = sizes.iter().map(|&n| r.f32s(n)).collect::<Result<Vec<_>, _>>()?;
            let v = sizes.iter().map(|&n| r.f32s(n)).collect::<Result<Vec<_>, _>>()?;
            Some(OptimSnapshot { step, m, v })
        }
        b => return Err(LvlmError::CorruptCheckpoint(format!("optimizer flag {b}"))),
    };
    if r.pos != bytes.len() {
        return Err(LvlmError::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { model, optim })
}

/// Writes the checkpoint through a temp file and rename.
pub fn save_checkpoint(path: &Path, model: &Lvlm<f32>, optim: Option<&OptimSnapshot>) -> Result<(), LvlmError> {
    if let Some(o) = optim {
        let sizes: Vec<usize> = model.params().iter().map(|p| p.numel()).collect();
        let ok = |xs: &Vec<Vec<f32>>| xs.len() == sizes.len() && xs.iter().zip(&sizes).all(|(x, &n)| x.len() == n);
        if !ok(&o.m) || !ok(&o.v) {
            return Err(LvlmError::Input("optimizer state does not mirror the parameters".into()));
        }
    }
    Ok(write_atomic(path, &encode_checkpoint(model, optim))?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, LvlmError> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Loads and checks the embedded architecture against `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Checkpoint, LvlmError> {
    let ck = load_checkpoint(path)?;
    let got = ck.model.config();
    let fields: [(&'static str, u64, u64); 8] = [
        ("d_model", got.d_model as u64, expected.d_model as u64),
        ("n_layers", got.n_layers as u64, expected.n_layers as u64),
        ("n_heads", got.n_heads as u64, expected.n_heads as u64),
        ("vocab_size", got.vocab_size as u64, expected.vocab_size as u64),
        ("max_positions", got.max_positions as u64, expected.max_positions as u64),
        ("patch_grid", got.patch_grid as u64, expected.patch_grid as u64),
        ("d_vision", got.d_vision as u64, expected.d_vision as u64),
        ("tied_head", got.tied_head as u64, expected.tied_head as u64),
    ];
    for (field, found, expected) in fields {
        if found != expected {
            return Err(LvlmError::CheckpointConfig { field, found, expected });
        }
    }
    Ok(ck)
}
