//! Binary container for named `f64` arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DSR1" | version: u8 | count: u32
//! count × { name_len: u32 | name: utf-8 | dtype: u8 | ndim: u32 | dims: ndim × u64 | payload: f64 × ∏dims }
//! ```
//!
//! Records are written sorted by name, so equal maps give equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Array;

pub const MAGIC: &[u8; 4] = b"DSR1";
pub const VERSION: u8 = 1;
const DTYPE_F64: u8 = 1;

/// Named arrays: parameters, optimizer moments, schedule and scalars.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub arrays: BTreeMap<String, Array>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, a: Array) {
        self.arrays.insert(name.into(), a);
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, x: f64) {
        self.insert(name, Array::vector(vec![x]));
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Malformed(format!("missing array '{name}'")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let a = self.get(name)?;
        if a.len() != 1 {
            return Err(Error::Malformed(format!("'{name}' is not a scalar")));
        }
        Ok(a[0])
    }

    /// Every array whose name starts with `prefix`, with the prefix removed.
    pub fn with_prefix(&self, prefix: &str) -> BTreeMap<String, Array> {
        self.arrays
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, a) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(a.shape().len() as u32).to_le_bytes());
            for d in a.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for x in a.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.take(1, "version")?[0];
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let count = r.u32("record count")?;
        let mut arrays = BTreeMap::new();
        let mut prev: Option<String> = None;
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Malformed("name is not utf-8".into()))?
                .to_string();
            if prev.as_ref().is_some_and(|p| *p >= name) {
                return Err(Error::Malformed(format!("record '{name}' out of order")));
            }
            let dtype = r.take(1, "dtype")?[0];
            if dtype != DTYPE_F64 {
                return Err(Error::Malformed(format!("unknown dtype tag {dtype} for '{name}'")));
            }
            let ndim = r.u32("ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                let d = u64::from_le_bytes(r.take(8, "dims")?.try_into().expect("8 bytes"));
                shape.push(usize::try_from(d).map_err(|_| Error::Malformed("dimension overflow".into()))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::Malformed(format!("payload size overflow in '{name}'")))?;
            let payload = r.take(n, "payload")?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.insert(name.clone(), Array::from_vec(&shape, data)?);
            prev = Some(name);
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { arrays })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated(what));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gauss, Rng};
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let mut rng = Rng::new(1);
        let mut c = Checkpoint::new();
        c.insert("w", gauss(&mut rng, &[3, 2]));
        c.insert("b", gauss(&mut rng, &[2]));
        c.insert_scalar("step", 17.0);
        c.insert("odd", Array::vector(vec![f64::NAN, -0.0, f64::INFINITY]));
        c
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.get("w").unwrap(), c.get("w").unwrap());
    }

    #[test]
    fn empty_map_round_trips() {
        let bytes = Checkpoint::new().to_bytes();
        assert_eq!(bytes.len(), 9);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), Checkpoint::new());
    }

    #[test]
    fn distinct_errors() {
        let mut bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic)));
        bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadVersion(9))));
        for cut in [2, 5, 8, 20, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
        bytes.push(0);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Malformed(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&sample(), &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        save_checkpoint(&load_checkpoint(&path).unwrap(), &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn arbitrary_maps_round_trip(entries in proptest::collection::btree_map("[a-z.]{1,8}", proptest::collection::vec(any::<f64>(), 0..6), 0..5)) {
            let mut c = Checkpoint::new();
            for (k, v) in entries {
                c.insert(k, Array::vector(v));
            }
            let bytes = c.to_bytes();
            prop_assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);
        }
    }
}
