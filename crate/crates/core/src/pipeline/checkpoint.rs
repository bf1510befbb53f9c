//! Self-describing tensor container.
//!
//! Layout: the 8 magic bytes `NOTECKPT`, a little-endian `u64` header
//! length, the JSON header, then the payload of concatenated little-endian
//! `f32` arrays. The header lists each tensor's name, shape, byte offset
//! (relative to the payload start) and byte length.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numcore::Parameter;

pub const MAGIC: &[u8; 8] = b"NOTECKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    kind: String,
    config: Value,
    vocab_fingerprint: String,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: Value,
    pub vocab_fingerprint: String,
    /// Free-form extra metadata (label map, history, ...).
    pub meta: Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, config: Value, vocab_fingerprint: impl Into<String>) -> Self {
        Checkpoint {
            kind: kind.into(),
            config,
            vocab_fingerprint: vocab_fingerprint.into(),
            meta: Value::Null,
            tensors: Vec::new(),
        }
    }

    pub fn push_param(&mut self, p: &Parameter<f32>) {
        let (r, c) = p.shape();
        self.tensors.push(NamedTensor {
            name: p.name.clone(),
            shape: vec![r, c],
            data: p.value.iter().copied().collect(),
        });
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    /// Rebuilds a parameter, checking the stored shape.
    pub fn param(&self, name: &str, shape: (usize, usize)) -> Result<Parameter<f32>> {
        let t = self.tensor(name)?;
        if t.shape != [shape.0, shape.1] {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has shape {:?}, expected {:?}",
                t.shape,
                [shape.0, shape.1]
            )));
        }
        let value = Array2::from_shape_vec(shape, t.data.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Parameter::new(name, value))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for t in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?}: shape {:?} does not hold {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            let nbytes = 4 * t.data.len() as u64;
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
                nbytes,
            });
            offset += nbytes;
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            config: self.config.clone(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let payload = &bytes[payload_start..];
        let mut entries: Vec<&TensorEntry> = header.tensors.iter().collect();
        entries.sort_by_key(|e| e.offset);
        let mut cursor = 0u64;
        for e in &entries {
            let elems: usize = e.shape.iter().product();
            if e.offset < cursor || e.nbytes != 4 * elems as u64 {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} overlaps or has a bad length",
                    e.name
                )));
            }
            cursor = e.offset + e.nbytes;
        }
        if cursor != payload.len() as u64 {
            return Err(bad("payload size does not match the tensor directory"));
        }
        let tensors = header
            .tensors
            .iter()
            .map(|e| {
                let raw = &payload[e.offset as usize..(e.offset + e.nbytes) as usize];
                NamedTensor {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                }
            })
            .collect();
        Ok(Checkpoint {
            kind: header.kind,
            config: header.config,
            vocab_fingerprint: header.vocab_fingerprint,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the checkpoint was written for `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new("encoder", json!({"b": 1, "a": [1, 2]}), "abc");
        ck.push_param(&Parameter::new("w", ndarray::array![[1.0f32, -2.5], [3.25, 0.0]]));
        ck.push_param(&Parameter::new("b", ndarray::array![[f32::MIN_POSITIVE, -0.0]]));
        ck
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(&bytes[..8], MAGIC);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut longer = bytes;
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
    }

    #[test]
    fn param_shape_is_checked() {
        let ck = sample();
        assert!(ck.param("w", (2, 2)).is_ok());
        assert!(ck.param("w", (1, 4)).is_err());
        assert!(ck.param("nope", (1, 1)).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_tensors_round_trip(
            data in prop::collection::vec(prop::collection::vec(any::<u32>(), 1..20), 0..5)
        ) {
            let mut ck = Checkpoint::new("lm", json!({}), "f");
            for (i, d) in data.iter().enumerate() {
                ck.tensors.push(NamedTensor {
                    name: format!("t{i}"),
                    shape: vec![1, d.len()],
                    data: d.iter().map(|&b| f32::from_bits(b)).collect(),
                });
            }
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
            for (a, b) in back.tensors.iter().zip(&ck.tensors) {
                let bits_a: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}
