//! Versioned binary checkpoints for the MLP predictor.
//!
//! Layout (all little-endian): an 8-byte magic, a u32 format version, the
//! four network dimensions as u32, a state-presence byte, the flat f64
//! parameter vector, and optionally the Adam state (step, epochs done,
//! first and second moments) for exact training resume.

use super::mlp::{MlpDims, MlpPredictor};
use super::train::TrainState;
use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 8] = b"PVCHKPT1";
const VERSION: u32 = 1;

/// Writes the model (and optionally optimizer state) to `path`.
pub fn save_checkpoint(
    path: &Path,
    model: &MlpPredictor,
    state: Option<&TrainState>,
) -> Result<()> {
    let dims = model.dims();
    let mut bytes = Vec::with_capacity(29 + model.params().len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [dims.input_dim, dims.width, dims.layers, dims.bins] {
        bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    bytes.push(state.is_some() as u8);
    for &p in model.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    if let Some(state) = state {
        if state.m.len() != model.params().len() {
            return Err(Error::DimensionMismatch {
                expected: model.params().len(),
                got: state.m.len(),
            });
        }
        bytes.extend_from_slice(&state.step.to_le_bytes());
        bytes.extend_from_slice(&(state.epochs_done as u64).to_le_bytes());
        for &m in &state.m {
            bytes.extend_from_slice(&m.to_le_bytes());
        }
        for &v in &state.v {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(MlpPredictor, Option<TrainState>)> {
    let bytes = fs::read(path)?;
    let mut cursor = Cursor {
        bytes: &bytes,
        at: 0,
    };
    if cursor.take(8)? != MAGIC {
        return Err(Error::BadCheckpoint("magic bytes do not match".into()));
    }
    let version = cursor.u32()?;
    if version != VERSION {
        return Err(Error::BadCheckpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let dims = MlpDims {
        input_dim: cursor.u32()? as usize,
        width: cursor.u32()? as usize,
        layers: cursor.u32()? as usize,
        bins: cursor.u32()? as usize,
    };
    if dims.input_dim == 0 || dims.width == 0 || dims.layers == 0 || dims.bins == 0 {
        return Err(Error::BadCheckpoint("zero network dimension".into()));
    }
    let has_state = match cursor.take(1)?[0] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::BadCheckpoint(format!(
                "invalid state flag {other}"
            )))
        }
    };
    let param_len = dims.param_len();
    let params = cursor.f64_vec(param_len)?;
    let state = if has_state {
        let step = cursor.u64()?;
        let epochs_done = cursor.u64()? as usize;
        let m = cursor.f64_vec(param_len)?;
        let v = cursor.f64_vec(param_len)?;
        Some(TrainState {
            m,
            v,
            step,
            epochs_done,
        })
    } else {
        None
    };
    if cursor.at != bytes.len() {
        return Err(Error::BadCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - cursor.at
        )));
    }
    let model = MlpPredictor::from_parts(dims, params)?;
    Ok((model, state))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.at + len > self.bytes.len() {
            return Err(Error::BadCheckpoint(format!(
                "truncated at byte {} needing {len} more",
                self.at
            )));
        }
        let out = &self.bytes[self.at..self.at + len];
        self.at += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("len 4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("len 8")))
    }

    fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("len 8")))
            .collect())
    }
}
