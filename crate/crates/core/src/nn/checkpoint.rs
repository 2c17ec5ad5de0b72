//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic      4 bytes  "CKPT"
//! version    u32      1
//! meta_len   u32      followed by meta_len bytes of UTF-8 JSON metadata
//! n_params   u32
//! per parameter:
//!   name_len u32, name (UTF-8), ndim u32, dims u32 x ndim, values f32 x numel
//! has_optim  u8       0 or 1
//! if 1: step u64, lr f64, weight_decay f64, beta1 f64, beta2 f64, eps f64,
//!       then for every parameter in order: m f32 x numel, v f32 x numel
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{AdamConfig, AdamState, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ModelParams,
    pub optimizer: Option<AdamState>,
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    let meta = serde_json::to_vec(&ckpt.meta)?;
    w.write_u32::<LE>(meta.len() as u32)?;
    w.write_all(&meta)?;
    w.write_u32::<LE>(ckpt.params.len() as u32)?;
    for (name, t) in ckpt.params.iter() {
        w.write_u32::<LE>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LE>(t.shape().len() as u32)?;
        for &d in t.shape() {
            w.write_u32::<LE>(d as u32)?;
        }
        for &v in t.values() {
            w.write_f32::<LE>(v as f32)?;
        }
    }
    match &ckpt.optimizer {
        None => w.write_u8(0)?,
        Some(state) => {
            w.write_u8(1)?;
            w.write_u64::<LE>(state.step)?;
            let c = state.config;
            for v in [c.lr, c.weight_decay, c.beta1, c.beta2, c.eps] {
                w.write_f64::<LE>(v)?;
            }
            for (m, v) in state.m.iter().zip(&state.v) {
                for &x in m {
                    w.write_f32::<LE>(x as f32)?;
                }
                for &x in v {
                    w.write_f32::<LE>(x as f32)?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("not a checkpoint (bad magic)"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta_len = r.read_u32::<LE>()? as usize;
    let meta: serde_json::Value = serde_json::from_slice(&read_bytes(&mut r, meta_len)?)?;
    let n = r.read_u32::<LE>()? as usize;
    let mut params = ModelParams::new();
    for _ in 0..n {
        let name_len = r.read_u32::<LE>()? as usize;
        let name = String::from_utf8(read_bytes(&mut r, name_len)?)
            .map_err(|_| Error::format("parameter name is not UTF-8"))?;
        let ndim = r.read_u32::<LE>()? as usize;
        let shape = (0..ndim)
            .map(|_| r.read_u32::<LE>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let values = read_f32s(&mut r, numel)?;
        params.insert(name, Tensor::new(shape, values)?)?;
    }
    let optimizer = match r.read_u8()? {
        0 => None,
        1 => {
            let step = r.read_u64::<LE>()?;
            let mut c = [0.0; 5];
            for v in c.iter_mut() {
                *v = r.read_f64::<LE>()?;
            }
            let config = AdamConfig {
                lr: c[0],
                weight_decay: c[1],
                beta1: c[2],
                beta2: c[3],
                eps: c[4],
            };
            let mut m = Vec::new();
            let mut v = Vec::new();
            for (_, t) in params.iter() {
                m.push(read_f32s(&mut r, t.len())?);
                v.push(read_f32s(&mut r, t.len())?);
            }
            Some(AdamState { step, m, v, config })
        }
        other => return Err(Error::format(format!("bad optimizer flag {other}"))),
    };
    Ok(Checkpoint {
        meta,
        params,
        optimizer,
    })
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| r.read_f32::<LE>().map(f64::from).map_err(Error::from))
        .collect()
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
