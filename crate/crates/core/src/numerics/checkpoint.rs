//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "EGOS"  u16 version  u32 count
//! count x { u32 name_len, name bytes (UTF-8), u8 rank, rank x u32 dim, f32 payload }
//! ```
//!
//! Entries are written in name order, so equal stores always serialize to
//! identical bytes.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EGOS";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(params: &ParamStore, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, value) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        write_tensor_body(&mut out, value)?;
    }
    Ok(())
}

/// `u8 rank`, dims, then the `f32` payload.
pub(crate) fn write_tensor_body<W: Write>(out: &mut W, value: &Tensor) -> Result<()> {
    out.write_all(&[value.rank() as u8])?;
    for &d in value.shape() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(value.len() * 4);
    for &v in value.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_exact<R: Read, const N: usize>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format("truncated file".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<R, 4>(input)?))
}

/// Checks magic and version; returns the version read.
pub(crate) fn read_header<R: Read>(input: &mut R, expected: u16) -> Result<u16> {
    let magic = read_exact::<R, 4>(input)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = u16::from_le_bytes(read_exact::<R, 2>(input)?);
    if version != expected {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {expected})"
        )));
    }
    Ok(version)
}

pub(crate) fn read_tensor_body<R: Read>(input: &mut R) -> Result<Tensor> {
    let [rank] = read_exact::<R, 1>(input)?;
    if rank == 0 {
        return Err(Error::Format("tensor of rank 0".into()));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(read_u32(input)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * 4];
    input
        .read_exact(&mut raw)
        .map_err(|_| Error::Format("truncated tensor payload".into()))?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamStore> {
    read_header(&mut input, CHECKPOINT_VERSION)?;
    let count = read_u32(&mut input)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; len];
        input
            .read_exact(&mut name)
            .map_err(|_| Error::Format("truncated parameter name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("name is not UTF-8".into()))?;
        let value = read_tensor_body(&mut input)?;
        params
            .insert(name, value)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(params)
}

/// Writes through a temporary sibling and renames, so a crash never leaves a
/// half-written checkpoint in place.
pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(params, &mut bytes)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("b", Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.25, 0.0, 7.0]).unwrap())
            .unwrap();
        p.insert("a.w", Tensor::from_vec(vec![0.1])).unwrap();
        p
    }

    #[test]
    fn layout_is_fixed() {
        let mut bytes = Vec::new();
        write_checkpoint(&sample(), &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"EGOS");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        // first entry is "a.w" (name order)
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 3);
        assert_eq!(&bytes[14..17], b"a.w");
        assert_eq!(bytes[17], 1);
        assert_eq!(u32::from_le_bytes(bytes[18..22].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(bytes[22..26].try_into().unwrap()), 0.1f32);
        let total = 10 + (4 + 3 + 1 + 4 + 4) + (4 + 1 + 1 + 8 + 24);
        assert_eq!(bytes.len(), total);
    }

    #[test]
    fn round_trip_matches_f32_rounding() {
        let mut p = sample();
        let mut bytes = Vec::new();
        write_checkpoint(&p, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        p.round_to_f32();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_other_versions() {
        let mut bytes = Vec::new();
        write_checkpoint(&sample(), &mut bytes).unwrap();
        bytes[4] = 9;
        let err = read_checkpoint(bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("unsupported format version 9"));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = Vec::new();
        write_checkpoint(&sample(), &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        bytes.truncate(bytes.len() - 3);
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }
}
