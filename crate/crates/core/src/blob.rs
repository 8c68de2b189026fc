//! Binary tensor container shared by encoded scenes and model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BTTN"
//! 4       1     rank
//! 5       1     dtype code (1 = i8, 2 = f32, 3 = f64)
//! 6       2     reserved, zero
//! 8       8     element count (u64), equal to the product of dims
//! 16      4*r   dims (u32 each)
//! ...           row-major payload
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BTTN";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum BlobData {
    I8(Vec<i8>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl BlobData {
    fn code(&self) -> u8 {
        match self {
            BlobData::I8(_) => 1,
            BlobData::F32(_) => 2,
            BlobData::F64(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BlobData::I8(v) => v.len(),
            BlobData::F32(v) => v.len(),
            BlobData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub dims: Vec<u32>,
    pub data: BlobData,
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

impl Blob {
    pub fn new(dims: Vec<u32>, data: BlobData) -> Result<Self> {
        let count: u64 = dims.iter().map(|&d| u64::from(d)).product();
        if count != data.len() as u64 {
            return Err(Error::Dimension(format!(
                "dims {dims:?} hold {count} elements, payload has {}",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::Dimension("rank above 255".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.dims.len() as u8);
        out.push(self.data.code());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(self.data.len() as u64).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            BlobData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
            BlobData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlobData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    /// Parses a container. `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(format_err(origin, "missing BTTN header"));
        }
        let rank = bytes[4] as usize;
        let code = bytes[5];
        let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let dims_end = HEADER_LEN + 4 * rank;
        if bytes.len() < dims_end {
            return Err(format_err(origin, "truncated dims"));
        }
        let dims: Vec<u32> = bytes[HEADER_LEN..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let product: u64 = dims.iter().map(|&d| u64::from(d)).product();
        if product != count {
            return Err(format_err(origin, format!("dims {dims:?} disagree with count {count}")));
        }
        let payload = &bytes[dims_end..];
        let width = match code {
            1 => 1,
            2 => 4,
            3 => 8,
            other => return Err(format_err(origin, format!("unknown dtype code {other}"))),
        };
        if payload.len() as u64 != count * width {
            return Err(format_err(
                origin,
                format!("payload is {} bytes, expected {}", payload.len(), count * width),
            ));
        }
        let data = match code {
            1 => BlobData::I8(payload.iter().map(|&b| b as i8).collect()),
            2 => BlobData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            _ => BlobData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let b = Blob::new(vec![2, 3], BlobData::I8(vec![-3, -2, -1, 0, 0, -1])).unwrap();
        let bytes = b.to_bytes();
        assert_eq!(
            &bytes[..24],
            &[b'B', b'T', b'T', b'N', 2, 1, 0, 0, 6, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]
        );
        assert_eq!(&bytes[24..], &[0xfd, 0xfe, 0xff, 0, 0, 0xff]);
    }

    #[test]
    fn f32_payload_little_endian() {
        let b = Blob::new(vec![1], BlobData::F32(vec![1.0])).unwrap();
        assert_eq!(&b.to_bytes()[16..], &[1, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f]);
    }

    #[test]
    fn rejects_bad_input() {
        let p = Path::new("x");
        assert!(Blob::from_bytes(b"NOPE", p).is_err());
        let mut bytes = Blob::new(vec![2], BlobData::F64(vec![1.0, 2.0])).unwrap().to_bytes();
        bytes.pop();
        assert!(Blob::from_bytes(&bytes, p).is_err());
        assert!(Blob::new(vec![3], BlobData::I8(vec![0])).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(dims in proptest::collection::vec(1u32..5, 0..4), seed in any::<u64>(), kind in 0u8..3) {
            let n: u32 = dims.iter().product();
            let data = match kind {
                0 => BlobData::I8((0..n).map(|i| (i as u64 ^ seed) as i8).collect()),
                1 => BlobData::F32((0..n).map(|i| (i as f32) * 0.5 - seed as f32).collect()),
                _ => BlobData::F64((0..n).map(|i| f64::from_bits(seed.wrapping_add(i as u64) >> 2)).collect()),
            };
            let b = Blob::new(dims, data).unwrap();
            let back = Blob::from_bytes(&b.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(b.to_bytes(), back.to_bytes());
        }
    }
}
