//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "DLGCKPT\0"
//! version      u32      currently 1
//! kind         u8       0 = LSTM, 1 = RNN, 2 = DNN
//! D, H, A      u32 x 3
//! n_tensors    u32
//! per tensor:  name_len u32, name (UTF-8), rank u32, dims u32 x rank,
//!              payload f64 x prod(dims) (IEEE-754 binary64)
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::model::{ModelKind, ModelParams, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DLGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn dim(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("dimension {v} does not fit in u32")))
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(&mut w, CHECKPOINT_VERSION)?;
    w.write_all(&[params.kind.code()])?;
    put_u32(&mut w, dim(params.input_dim)?)?;
    put_u32(&mut w, dim(params.hidden_dim)?)?;
    put_u32(&mut w, dim(params.n_actions)?)?;
    put_u32(&mut w, dim(params.tensors.len())?)?;
    for t in &params.tensors {
        put_u32(&mut w, dim(t.name.len())?)?;
        w.write_all(t.name.as_bytes())?;
        put_u32(&mut w, dim(t.shape.len())?)?;
        for d in &t.shape {
            put_u32(&mut w, dim(*d)?)?;
        }
        for v in &t.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = get_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let kind = ModelKind::from_code(kind[0])
        .ok_or_else(|| Error::Checkpoint(format!("unknown model kind {}", kind[0])))?;
    let input_dim = get_u32(&mut r)? as usize;
    let hidden_dim = get_u32(&mut r)? as usize;
    let n_actions = get_u32(&mut r)? as usize;
    let n = get_u32(&mut r)? as usize;
    if n > 16 {
        return Err(Error::Checkpoint(format!("implausible tensor count {n}")));
    }
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let len = get_u32(&mut r)? as usize;
        if len > 256 {
            return Err(Error::Checkpoint("tensor name too long".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = get_u32(&mut r)? as usize;
        if rank > 4 {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(get_u32(&mut r)? as usize);
        }
        let count: usize = shape.iter().product();
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        tensors.push(Tensor {
            name,
            shape,
            values,
        });
    }
    let params = ModelParams {
        kind,
        input_dim,
        hidden_dim,
        n_actions,
        tensors,
    };
    params
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(params)
}
