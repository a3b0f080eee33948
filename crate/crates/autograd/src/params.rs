use std::collections::HashMap;

use crate::Mat;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BlobError {
    #[error("parameter blob truncated at byte {0}")]
    Truncated(usize),
    #[error("bad parameter blob magic")]
    BadMagic,
    #[error("unsupported parameter blob version {0}")]
    Version(u32),
    #[error("parameter name is not valid UTF-8")]
    Name,
    #[error("duplicate parameter `{0}`")]
    Duplicate(String),
    #[error("parameter `{0}` has non-finite entries")]
    NonFinite(String),
    #[error("{0} trailing bytes after last parameter")]
    Trailing(usize),
}

const MAGIC: &[u8; 8] = b"EMBINVPB";
const VERSION: u32 = 1;

/// Named, ordered collection of trainable matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    lookup: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name, which is always a
    /// model-construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter name {name}");
        let id = self.values.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalars across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    /// Serializes every parameter, in registration order, as
    /// `magic | version | count | (name_len name rows cols f64le*)*`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_scalars() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for (name, value) in self.names.iter().zip(&self.values) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(value.ncols() as u32).to_le_bytes());
            for x in value.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BlobError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(BlobError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(BlobError::Version(version));
        }
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| BlobError::Name)?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or(BlobError::Truncated(r.pos))?;
            let raw = r.take(n)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if data.iter().any(|x| !x.is_finite()) {
                return Err(BlobError::NonFinite(name));
            }
            if store.lookup.contains_key(&name) {
                return Err(BlobError::Duplicate(name));
            }
            let value = Mat::from_shape_vec((rows, cols), data).expect("length checked above");
            store.add(name, value);
        }
        if r.pos != bytes.len() {
            return Err(BlobError::Trailing(bytes.len() - r.pos));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BlobError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(BlobError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, BlobError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn blob_round_trip() {
        let mut s = ParamStore::new();
        s.add("w", array![[1.0, -2.5], [3.0, 0.125]]);
        s.add("b", array![[0.0, 7.0, 1e-300]]);
        let back = ParamStore::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.id("b"), Some(ParamId(1)));
    }

    #[test]
    fn blob_rejects_garbage() {
        assert_eq!(ParamStore::from_bytes(b"nope"), Err(BlobError::Truncated(0)));
        assert_eq!(
            ParamStore::from_bytes(b"XXXXXXXX\x01\0\0\0\0\0\0\0"),
            Err(BlobError::BadMagic)
        );
        let mut s = ParamStore::new();
        s.add("w", array![[1.0]]);
        let mut bytes = s.to_bytes();
        bytes.push(0);
        assert_eq!(ParamStore::from_bytes(&bytes), Err(BlobError::Trailing(1)));
        let bytes = s.to_bytes();
        assert!(matches!(
            ParamStore::from_bytes(&bytes[..bytes.len() - 1]),
            Err(BlobError::Truncated(_))
        ));
    }

    proptest! {
        #[test]
        fn from_bytes_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = ParamStore::from_bytes(&bytes);
        }
    }
}
