//! Named parameter store and its binary container.
//!
//! Layout: magic `RAGOW1`, u64 parameter count, then for each parameter in
//! ascending path order a u16 path length, the UTF-8 path, u32 rows, u32
//! cols, and rows·cols little-endian f64 values in row-major order. Round
//! trips are bit-exact.

use ndarray::Array2;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const WEIGHTS_MAGIC: &[u8; 6] = b"RAGOW1";

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("unrecognized weight file magic {0:?}")]
    VersionMismatch(Vec<u8>),
    #[error("corrupt weight file: {0}")]
    CorruptFile(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: (usize, usize),
        expected: (usize, usize),
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parameter map with deterministic (path-sorted) iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelWeights {
    pub params: BTreeMap<String, Array2<f64>>,
}

impl ModelWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.get(name)
    }

    /// Lookup with a shape contract, for binding stored weights to an
    /// architecture.
    pub fn require(
        &self,
        name: &str,
        rows: usize,
        cols: usize,
    ) -> Result<&Array2<f64>, WeightsError> {
        let arr = self
            .params
            .get(name)
            .ok_or_else(|| WeightsError::MissingParam(name.to_string()))?;
        if arr.dim() != (rows, cols) {
            return Err(WeightsError::ShapeMismatch {
                name: name.to_string(),
                found: arr.dim(),
                expected: (rows, cols),
            });
        }
        Ok(arr)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Total scalar count across all parameters.
    pub fn n_scalars(&self) -> usize {
        self.params.values().map(|a| a.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, arr) in &self.params {
            let path = name.as_bytes();
            assert!(path.len() <= u16::MAX as usize, "parameter path too long");
            out.extend_from_slice(&(path.len() as u16).to_le_bytes());
            out.extend_from_slice(path);
            let (rows, cols) = arr.dim();
            out.extend_from_slice(&(rows as u32).to_le_bytes());
            out.extend_from_slice(&(cols as u32).to_le_bytes());
            for v in arr.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, WeightsError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(WEIGHTS_MAGIC.len(), "magic")?;
        if magic != WEIGHTS_MAGIC {
            return Err(WeightsError::VersionMismatch(magic.to_vec()));
        }
        let count = u64::from_le_bytes(cur.take_array("parameter count")?) as usize;
        let mut params = BTreeMap::new();
        for i in 0..count {
            let path_len = u16::from_le_bytes(cur.take_array("path length")?) as usize;
            let path_bytes = cur.take(path_len, "path")?;
            let name = std::str::from_utf8(path_bytes)
                .map_err(|_| {
                    WeightsError::CorruptFile(format!("parameter {i} path is not UTF-8"))
                })?
                .to_string();
            let rows = u32::from_le_bytes(cur.take_array("rows")?) as usize;
            let cols = u32::from_le_bytes(cur.take_array("cols")?) as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|&n| n <= bytes.len() / 8 + 1)
                .ok_or_else(|| {
                    WeightsError::CorruptFile(format!("`{name}` claims {rows}x{cols} values"))
                })?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(cur.take_array("values")?));
            }
            let arr = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| WeightsError::CorruptFile(e.to_string()))?;
            if params.insert(name.clone(), arr).is_some() {
                return Err(WeightsError::CorruptFile(format!(
                    "duplicate parameter `{name}`"
                )));
            }
        }
        if cur.pos != bytes.len() {
            return Err(WeightsError::CorruptFile(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        Ok(ModelWeights { params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WeightsError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WeightsError> {
        let bytes = std::fs::read(path)?;
        Self::parse(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], WeightsError> {
        if self.pos + n > self.bytes.len() {
            return Err(WeightsError::CorruptFile(format!(
                "truncated while reading {what}"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], WeightsError> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }
}
