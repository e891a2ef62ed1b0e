//! `RVT1` tensor files.
//!
//! Layout: the magic bytes `RVT1`, a `u8` dtype tag (0 = f32, 1 = f64), a
//! `u8` rank, `rank` little-endian `u64` dims, then the raw little-endian
//! elements in row-major order.

use std::fs;
use std::path::Path;

use super::{Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RVT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub fn encode_tensor<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.rank() + T::DTYPE.size() * t.numel());
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE.tag());
    out.push(t.rank() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode_tensor<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let fmt = |m: String| Error::Format(m);
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(fmt("missing RVT1 magic".into()));
    }
    let dtype = DType::from_tag(bytes[4]).ok_or_else(|| fmt(format!("unknown dtype tag {}", bytes[4])))?;
    if dtype != T::DTYPE {
        return Err(fmt(format!("file holds {dtype:?}, requested {:?}", T::DTYPE)));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 8 * rank;
    if bytes.len() < header {
        return Err(fmt("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    let size = dtype.size();
    if bytes.len() != header + n * size {
        return Err(fmt(format!(
            "payload holds {} bytes, dims {dims:?} need {}",
            bytes.len() - header,
            n * size
        )));
    }
    let data = bytes[header..].chunks_exact(size).map(T::read_le).collect();
    Tensor::new(&dims, data)
}

pub fn write_tensor<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{randn, Rng};

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(&[2, 1], vec![1.0, -2.0]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(&b[..4], b"RVT1");
        assert_eq!(b[4], 0);
        assert_eq!(b[5], 2);
        assert_eq!(&b[6..14], &2u64.to_le_bytes());
        assert_eq!(&b[14..22], &1u64.to_le_bytes());
        assert_eq!(&b[22..26], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 30);
    }

    #[test]
    fn file_round_trip_f64() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.rvt");
        let t = randn::<f64>(&mut Rng::new(2), &[3, 4, 5], 0.0, 1.0).unwrap();
        write_tensor(&p, &t).unwrap();
        assert_eq!(read_tensor::<f64>(&p).unwrap(), t);
    }

    #[test]
    fn rejects_wrong_dtype_and_truncation() {
        let t = Tensor::<f32>::zeros(&[4]);
        let b = encode_tensor(&t);
        assert!(decode_tensor::<f64>(&b).is_err());
        assert!(decode_tensor::<f32>(&b[..b.len() - 1]).is_err());
        assert!(decode_tensor::<f32>(b"RVT0\0\0").is_err());
    }
}
