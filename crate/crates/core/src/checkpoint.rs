//! Binary weight checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PSFW" | version: u32 | count: u32 |
//!   count × ( name_len: u16 | name: UTF-8 | shape: 4 × u32 | data: f32 × numel )
//! ```

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"PSFW";
pub const FORMAT_VERSION: u32 = 1;

/// Named tensor as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

pub fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        for d in t.tensor.shape().0 {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint {
                offset: self.pos,
                reason: format!(
                    "truncated: need {n} bytes for {what}, {} remain",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            reason: "bad magic, expected \"PSFW\"".into(),
        });
    }
    let version_at = r.pos;
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint {
            offset: version_at,
            reason: format!("unsupported format version {version}"),
        });
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let len_at = r.pos;
        let name_len = r.u16("name length")? as usize;
        if name_len == 0 || name_len > r.bytes.len() - r.pos {
            return Err(Error::Checkpoint {
                offset: len_at,
                reason: format!("tensor {i}: name length {name_len} is out of range"),
            });
        }
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint {
                offset: name_at,
                reason: format!("tensor {i}: name is not UTF-8"),
            })?
            .to_owned();
        let shape_at = r.pos;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("shape")? as usize;
        }
        let shape = Shape(dims);
        let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let numel = match numel {
            Some(n) if n > 0 => n,
            _ => {
                return Err(Error::Checkpoint {
                    offset: shape_at,
                    reason: format!("tensor {name}: invalid shape {shape}"),
                })
            }
        };
        let byte_len = numel.checked_mul(4).ok_or_else(|| Error::Checkpoint {
            offset: shape_at,
            reason: format!("tensor {name}: shape {shape} overflows"),
        })?;
        let raw = r.take(byte_len, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(NamedTensor {
            name,
            tensor: Tensor::new(shape, data)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint {
            offset: r.pos,
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<NamedTensor> {
        vec![
            NamedTensor {
                name: "a.weight".into(),
                tensor: Tensor::from_fn(Shape::new(2, 1, 3, 3), |i| i as f32 * 0.5 - 3.0),
            },
            NamedTensor {
                name: "a.bias".into(),
                tensor: Tensor::new(Shape::new(1, 2, 1, 1), vec![f32::MIN_POSITIVE, -0.0]).unwrap(),
            },
        ]
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"PSFW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 8);
        assert_eq!(&bytes[14..22], b"a.weight");
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let original = sample();
        let back = decode(&encode(&original)).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in original.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert!(a.tensor.bit_eq(&b.tensor));
        }
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode(&sample());
        for cut in 0..bytes.len() {
            assert!(decode(&bytes[..cut]).is_err(), "prefix of {cut} bytes accepted");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(decode(&bytes).unwrap_err().to_string().contains("magic"));
        let mut bytes = encode(&sample());
        bytes[4] = 9;
        assert!(decode(&bytes).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn corrupted_name_length_reports_offset() {
        let mut bytes = encode(&sample());
        bytes[12..14].copy_from_slice(&u16::MAX.to_le_bytes());
        match decode(&bytes) {
            Err(Error::Checkpoint { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }
}
