//! `VDT1` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "VDT1"
//! count      u32      number of entries
//! entry*     name_len u32 | name (UTF-8) | ndim u32 | dims u32 × ndim | data f32 × prod(dims)
//! ```
//!
//! Data is row-major IEEE-754 binary32. Entry order is preserved and names
//! are unique. Non-tensor payloads (JSON headers) are stored as 1-D entries
//! holding one byte value per element.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::video::{LatentVideo, VideoShape};

pub const MAGIC: &[u8; 4] = b"VDT1";

/// Upper bound on a single entry, guarding against corrupt headers.
const MAX_ELEMENTS: u64 = 1 << 31;
const MAX_NAME_LEN: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Entry {
    /// Bit-level equality, so NaN payloads compare equal to themselves.
    pub fn bit_eq(&self, other: &Entry) -> bool {
        self.name == other.name
            && self.dims == other.dims
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    entries: Vec<Entry>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn bit_eq(&self, other: &TensorContainer) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.bit_eq(b))
    }

    pub fn insert(&mut self, name: &str, dims: &[usize], data: Vec<f32>) -> Result<()> {
        if self.get(name).is_some() {
            return Err(Error::Container(format!("duplicate entry name {name:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Container(format!(
                "entry {name:?}: dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Container(format!(
                "entry {name:?}: dimension exceeds u32"
            )));
        }
        self.entries.push(Entry {
            name: name.to_string(),
            dims: dims.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn insert_f64(&mut self, name: &str, dims: &[usize], data: &[f64]) -> Result<()> {
        self.insert(name, dims, data.iter().map(|&x| x as f32).collect())
    }

    pub fn insert_video(&mut self, name: &str, video: &LatentVideo) -> Result<()> {
        self.insert_f64(name, &video.shape().dims(), video.as_slice())
    }

    pub fn insert_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let bytes = serde_json::to_vec(value)?;
        let len = bytes.len();
        self.insert(name, &[len], bytes.into_iter().map(f32::from).collect())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name)
            .ok_or_else(|| Error::Container(format!("missing entry {name:?}")))
    }

    pub fn get_f64(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let e = self.require(name)?;
        Ok((e.dims.clone(), e.data.iter().map(|&x| x as f64).collect()))
    }

    pub fn get_video(&self, name: &str) -> Result<LatentVideo> {
        let (dims, data) = self.get_f64(name)?;
        if dims.len() != 4 {
            return Err(Error::Container(format!(
                "entry {name:?} has {} dims, expected 4",
                dims.len()
            )));
        }
        LatentVideo::from_vec(VideoShape::new(dims[0], dims[1], dims[2], dims[3]), data)
    }

    pub fn get_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let e = self.require(name)?;
        let bytes = e
            .data
            .iter()
            .map(|&x| {
                if x.fract() == 0.0 && (0.0..=255.0).contains(&x) {
                    Ok(x as u8)
                } else {
                    Err(Error::Container(format!(
                        "entry {name:?} is not a byte payload"
                    )))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(&mut w, self.entries.len())?;
        for e in &self.entries {
            write_u32(&mut w, e.name.len())?;
            w.write_all(e.name.as_bytes())?;
            write_u32(&mut w, e.dims.len())?;
            for &d in &e.dims {
                write_u32(&mut w, d)?;
            }
            let mut buf = Vec::with_capacity(e.data.len() * 4);
            for x in &e.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Container(format!("bad magic {magic:?}")));
        }
        let count = read_u32(&mut r)?;
        let mut out = TensorContainer::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)?;
            if name_len > MAX_NAME_LEN {
                return Err(Error::Container(format!(
                    "name length {name_len} too large"
                )));
            }
            let mut name = vec![0u8; name_len as usize];
            r.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Container("entry name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)?;
            if ndim > 16 {
                return Err(Error::Container(format!(
                    "entry {name:?}: ndim {ndim} too large"
                )));
            }
            let mut dims = Vec::with_capacity(ndim as usize);
            let mut total: u64 = 1;
            for _ in 0..ndim {
                let d = read_u32(&mut r)?;
                total = total.saturating_mul(d as u64);
                dims.push(d as usize);
            }
            if total > MAX_ELEMENTS {
                return Err(Error::Container(format!(
                    "entry {name:?}: {total} elements"
                )));
            }
            let mut raw = vec![0u8; total as usize * 4];
            r.read_exact(&mut raw).map_err(truncated)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            out.insert(&name, &dims, data)?;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let c = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Container(format!("{} trailing bytes", cursor.len())));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Container("truncated container".into())
    } else {
        Error::Io(e)
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Container(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_byte_layout() {
        let mut c = TensorContainer::new();
        c.insert("ab", &[2], vec![1.0, -2.5]).unwrap();
        let bytes = c.to_bytes();
        let mut want = b"VDT1".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(b"ab");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn rejects_duplicates_and_bad_lengths() {
        let mut c = TensorContainer::new();
        c.insert("x", &[1], vec![0.0]).unwrap();
        assert!(c.insert("x", &[1], vec![0.0]).is_err());
        assert!(c.insert("y", &[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(TensorContainer::from_bytes(b"VDT2\0\0\0\0").is_err());
        let mut c = TensorContainer::new();
        c.insert("x", &[3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = c.to_bytes();
        assert!(TensorContainer::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(TensorContainer::from_bytes(&extra).is_err());
    }

    #[test]
    fn json_payload_round_trip() {
        let mut c = TensorContainer::new();
        let v = serde_json::json!({"dim": 32, "name": "toy ✓"});
        c.insert_json("__config_json__", &v).unwrap();
        let back: serde_json::Value = TensorContainer::from_bytes(&c.to_bytes())
            .unwrap()
            .get_json("__config_json__")
            .unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn zero_sized_and_scalar_entries() {
        let mut c = TensorContainer::new();
        c.insert("empty", &[0, 4], vec![]).unwrap();
        c.insert("scalar", &[], vec![7.0]).unwrap();
        let back = TensorContainer::from_bytes(&c.to_bytes()).unwrap();
        assert!(back.bit_eq(&c));
    }
}
