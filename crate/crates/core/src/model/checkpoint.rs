//! Binary checkpoints.
//!
//! Little-endian layout: magic `TRPD`, format version (u32), config
//! hash (u64), step (u64), RNG seed (u64) and per-stream word
//! positions, the embedded config JSON, then length-prefixed named
//! arrays (dtype byte: 8 = f64, 4 = f32; rank; dims; payload).
//! Parameters and optimizer moments round-trip bit-exactly, so a
//! reloaded run continues on the original trajectory.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::adamw::AdamState;
use crate::model::{Param, ParamSet};
use crate::tensor::rng::RngState;

const MAGIC: &[u8; 4] = b"TRPD";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Everything needed to resume training exactly.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: u64,
    pub config_hash: u64,
    pub config_json: String,
    pub rng_seed: u64,
    pub rng_positions: Vec<u128>,
    pub params: ParamSet,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
    pub adam_t: u64,
}

impl Checkpoint {
    pub fn snapshot(
        step: u64,
        config_hash: u64,
        config_json: String,
        rng: &RngState,
        params: &ParamSet,
        adam: &AdamState,
    ) -> Self {
        Self {
            step,
            config_hash,
            config_json,
            rng_seed: rng.seed(),
            rng_positions: rng.word_positions(),
            params: params.clone(),
            adam_m: adam.m.clone(),
            adam_v: adam.v.clone(),
            adam_t: adam.t,
        }
    }

    pub fn rng_state(&self) -> RngState {
        RngState::restore(self.rng_seed, &self.rng_positions)
    }

    pub fn adam_state(&self) -> AdamState {
        AdamState {
            m: self.adam_m.clone(),
            v: self.adam_v.clone(),
            t: self.adam_t,
        }
    }

    pub fn write_to(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.config_hash.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&self.adam_t.to_le_bytes())?;
        w.write_all(&self.rng_seed.to_le_bytes())?;
        w.write_all(&(self.rng_positions.len() as u32).to_le_bytes())?;
        for &pos in &self.rng_positions {
            w.write_all(&(pos as u64).to_le_bytes())?;
            w.write_all(&((pos >> 64) as u64).to_le_bytes())?;
        }
        let cfg = self.config_json.as_bytes();
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(cfg)?;

        let arrays = self.named_arrays();
        w.write_all(&(arrays.len() as u32).to_le_bytes())?;
        for (name, shape, data) in arrays {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u32).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&[8u8])?; // f64 payload
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in &shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn named_arrays(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (k, p) in self.params.entries.iter().enumerate() {
            out.push((p.name.clone(), p.shape.clone(), &p.data));
            out.push((format!("adam.m.{}", p.name), p.shape.clone(), &self.adam_m[k]));
            out.push((format!("adam.v.{}", p.name), p.shape.clone(), &self.adam_v[k]));
        }
        out
    }

    pub fn read_from(path: &Path) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let config_hash = read_u64(&mut r)?;
        let step = read_u64(&mut r)?;
        let adam_t = read_u64(&mut r)?;
        let rng_seed = read_u64(&mut r)?;
        let n_streams = read_u32(&mut r)? as usize;
        let mut rng_positions = Vec::with_capacity(n_streams);
        for _ in 0..n_streams {
            let lo = read_u64(&mut r)? as u128;
            let hi = read_u64(&mut r)? as u128;
            rng_positions.push(lo | (hi << 64));
        }
        let cfg_len = read_u32(&mut r)? as usize;
        let mut cfg_bytes = vec![0u8; cfg_len];
        r.read_exact(&mut cfg_bytes)?;
        let config_json = String::from_utf8(cfg_bytes)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;

        let n_arrays = read_u32(&mut r)? as usize;
        let mut named: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::with_capacity(n_arrays);
        for _ in 0..n_arrays {
            let name_len = read_u32(&mut r)? as usize;
            let mut nb = vec![0u8; name_len];
            r.read_exact(&mut nb)?;
            let name =
                String::from_utf8(nb).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            let mut dtype = [0u8; 1];
            r.read_exact(&mut dtype)?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let data = match dtype[0] {
                8 => {
                    let mut buf = vec![0u8; numel * 8];
                    r.read_exact(&mut buf)?;
                    buf.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect()
                }
                4 => {
                    let mut buf = vec![0u8; numel * 4];
                    r.read_exact(&mut buf)?;
                    buf.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                        .collect()
                }
                other => {
                    return Err(CheckpointError::Malformed(format!(
                        "unknown dtype tag {other}"
                    )))
                }
            };
            named.push((name, shape, data));
        }

        let mut params = ParamSet::default();
        let mut adam_m = Vec::new();
        let mut adam_v = Vec::new();
        for (name, shape, data) in &named {
            if !name.starts_with("adam.") {
                params.entries.push(Param {
                    name: name.clone(),
                    shape: shape.clone(),
                    data: data.clone(),
                });
            }
        }
        for p in &params.entries {
            let find = |prefix: &str| -> Result<Vec<f64>, CheckpointError> {
                let key = format!("{prefix}{}", p.name);
                named
                    .iter()
                    .find(|(n, _, _)| *n == key)
                    .map(|(_, _, d)| d.clone())
                    .ok_or_else(|| CheckpointError::Malformed(format!("missing {key}")))
            };
            adam_m.push(find("adam.m.")?);
            adam_v.push(find("adam.v.")?);
        }
        Ok(Self {
            step,
            config_hash,
            config_json,
            rng_seed,
            rng_positions,
            params,
            adam_m,
            adam_v,
            adam_t,
        })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
