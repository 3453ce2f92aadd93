//! `STWT` weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "STWT"  u16 version  u32 count
//! repeated count times:
//!     u16 name_len  name (UTF-8)  u8 rank  u32 dims[rank]  f32 data[product(dims)]
//! ```

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STWT";
pub const VERSION: u16 = 1;
/// Byte offset of the tensor count field.
pub const COUNT_OFFSET: usize = 6;

/// Ordered named tensors, as stored on disk.
pub type NamedTensors = Vec<(String, Tensor<f32>)>;

pub fn encode(tensors: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| Error::invalid("too many tensors"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| Error::invalid(format!("rank too large for {name}")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::invalid(format!("dimension too large in {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<NamedTensors> {
    Ok(decode_with_offsets(bytes)?.into_iter().map(|(n, t, _)| (n, t)).collect())
}

/// Like [`decode`], also returning the byte offset where each record starts.
pub fn decode_with_offsets(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>, usize)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected STWT".into(),
        });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format {
                offset: at + 2,
                message: format!("tensor {i} name is not UTF-8"),
            })?
            .to_string();
        let rank = r.u8("rank")?;
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let d = r.u32("dimension")? as usize;
            if d == 0 {
                return Err(Error::Format {
                    offset: r.pos - 4,
                    message: format!("zero dimension in {name}"),
                });
            }
            dims.push(d);
        }
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| Error::Format {
            offset: r.pos,
            message: format!("element count overflows for {name}"),
        })?;
        let raw = r.take(n.saturating_mul(4), "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let dims = if dims.is_empty() { vec![1] } else { dims };
        out.push((name, Tensor::from_vec(&dims, data)?, at));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<NamedTensors> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn truncated_reports_offset() {
        let t = vec![("w".to_string(), Tensor::<f32>::ones(&[2, 2]))];
        let bytes = encode(&t).unwrap();
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 4 + 2 + 4 + 2 + 1 + 1 + 8),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode(b"NOPE\x01\x00"), Err(Error::Format { offset: 0, .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            tensors in proptest::collection::vec(
                ("[a-z/._0-9]{1,12}", proptest::collection::vec(1usize..4, 1..4), any::<u32>()),
                0..5,
            )
        ) {
            let named: NamedTensors = tensors
                .into_iter()
                .map(|(name, dims, bits)| {
                    let n: usize = dims.iter().product();
                    let data = (0..n as u32).map(|i| f32::from_bits(bits.wrapping_add(i.wrapping_mul(2654435761)))).collect();
                    (name, Tensor::from_vec(&dims, data).unwrap())
                })
                .collect();
            let bytes = encode(&named).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(back.len(), named.len());
            for ((n1, t1), (n2, t2)) in named.iter().zip(&back) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
            prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }
}
