//! The `VSTN` tensor file format.
//!
//! Layout: magic `VSTN`, `u32` version (1), `u32` rank, `rank` x `u64`
//! dims, then the payload as little-endian `f32`. All integers are
//! little-endian. Values are rounded to `f32` on write.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{NumericError, Tensor};

pub const MAGIC: &[u8; 4] = b"VSTN";
pub const VERSION: u32 = 1;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, NumericError> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(NumericError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NumericError::Format(format!("unsupported version {version}")));
    }
    let rank = read_u32(&mut r)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        read_exact(&mut r, &mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    if r.len() != 4 * n {
        return Err(NumericError::Format(format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            r.len(),
            4 * n
        )));
    }
    let data = r
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    Tensor::new(shape, data)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<(), NumericError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_tensor(t))?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor, NumericError> {
    decode_tensor(&fs::read(path)?)
}

/// Rounds every value to the nearest `f32`, i.e. what a save/load cycle
/// preserves.
pub fn quantize_f32(t: &Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), NumericError> {
    r.read_exact(buf)
        .map_err(|_| NumericError::Format("truncated header".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32, NumericError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
