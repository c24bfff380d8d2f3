//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes   b"DFOGCKPT"
//! version   u32       1
//! meta_len  u32       byte length of the metadata text
//! meta      meta_len  UTF-8 text (free-form, typically key=value lines)
//! blocks    u32       number of parameter blocks
//! per block:
//!   name_len  u32
//!   name      name_len bytes UTF-8
//!   rank      u32
//!   extents   rank x u32
//!   values    prod(extents) x f32 (IEEE-754 binary32)
//! ```
//!
//! Values are always stored at 32-bit precision regardless of the in-memory
//! element type.

use std::io::{Read, Write};
use std::path::Path;

use crate::{ParamSet, Real, Result, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DFOGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub params: ParamSet<f32>,
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| TensorError::Checkpoint(format!("unexpected end of file: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn get_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)
        .map_err(|e| TensorError::Checkpoint(format!("unexpected end of file: {e}")))?;
    Ok(b)
}

pub fn encode_checkpoint<T: Real>(w: &mut impl Write, meta: &str, params: &ParamSet<T>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    put_u32(w, meta.len() as u32)?;
    w.write_all(meta.as_bytes())?;
    put_u32(w, params.len() as u32)?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        put_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.shape().len() as u32)?;
        for &d in t.shape() {
            put_u32(w, d as u32)?;
        }
        for &v in t.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn decode_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let magic = get_bytes(r, 8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = get_u32(r)? as usize;
    let meta = String::from_utf8(get_bytes(r, meta_len)?)
        .map_err(|_| TensorError::Checkpoint("metadata is not UTF-8".into()))?;
    let blocks = get_u32(r)?;
    let mut params = ParamSet::new();
    for _ in 0..blocks {
        let name_len = get_u32(r)? as usize;
        let name = String::from_utf8(get_bytes(r, name_len)?)
            .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = get_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(get_u32(r)? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = get_bytes(r, n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if params.find(&name).is_some() {
            return Err(TensorError::Checkpoint(format!("duplicate block {name}")));
        }
        params.add(name, Tensor::new(&shape, data)?);
    }
    Ok(Checkpoint { meta, params })
}

pub fn write_checkpoint<T: Real>(path: &Path, meta: &str, params: &ParamSet<T>) -> Result<()> {
    let mut buf = Vec::new();
    encode_checkpoint(&mut buf, meta, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.add("enc.w", Tensor::new(&[2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-7, -0.0]).unwrap());
        p.add("bias", Tensor::new(&[1], vec![42.0]).unwrap());
        p
    }

    #[test]
    fn byte_layout_is_exact() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::new(&[1], vec![1.0f32]).unwrap());
        let mut buf = Vec::new();
        encode_checkpoint(&mut buf, "k=v", &p).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"DFOGCKPT");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&3u32.to_le_bytes());
        expected.extend_from_slice(b"k=v");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(b"w");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn round_trip() {
        let p = sample_params();
        let mut buf = Vec::new();
        encode_checkpoint(&mut buf, "kind=CL\ndepth=4\n", &p).unwrap();
        let ck = decode_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(ck.meta, "kind=CL\ndepth=4\n");
        assert_eq!(ck.params, p);
    }

    #[test]
    fn truncated_and_versioned_inputs_fail() {
        let p = sample_params();
        let mut buf = Vec::new();
        encode_checkpoint(&mut buf, "", &p).unwrap();
        let cut = &buf[..buf.len() - 2];
        assert!(decode_checkpoint(&mut &cut[..]).is_err());
        let mut bumped = buf.clone();
        bumped[8] = 2;
        let err = decode_checkpoint(&mut bumped.as_slice()).unwrap_err();
        assert!(err.to_string().contains("unsupported version 2"));
        let mut bad = buf;
        bad[0] = b'X';
        assert!(decode_checkpoint(&mut bad.as_slice()).is_err());
    }
}
