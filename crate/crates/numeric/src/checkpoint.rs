//! Flat binary container for named matrices plus a metadata string.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "DAMRCKPT" | u32 version | u64 metadata length | metadata (UTF-8)
//! u64 tensor count | per tensor, in name order:
//!     u32 name length | name | u32 rank | u64 dims[rank] | f64 values (row-major)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"DAMRCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),
    #[error("tensor {name}: rank {rank} is not supported")]
    Rank { name: String, rank: u32 },
    #[error("invalid UTF-8 in checkpoint {0}")]
    Utf8(&'static str),
    #[error("trailing bytes after the last tensor")]
    Trailing,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub tensors: BTreeMap<String, Array2<f64>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        let pos = self.pos;
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Truncated(pos))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.tensors.iter().map(|(n, t)| n.len() + 28 + 8 * t.len()).sum();
        let mut out = Vec::with_capacity(32 + self.metadata.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u64).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let n = r.len()?;
        let metadata = std::str::from_utf8(r.take(n)?)
            .map_err(|_| CheckpointError::Utf8("metadata"))?
            .to_string();
        let count = r.len()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| CheckpointError::Utf8("tensor name"))?
                .to_string();
            let rank = r.u32()?;
            if rank != 2 {
                return Err(CheckpointError::Rank { name, rank });
            }
            let (rows, cols) = (r.len()?, r.len()?);
            let size = rows
                .checked_mul(cols)
                .and_then(|s| s.checked_mul(8))
                .ok_or(CheckpointError::Truncated(r.pos))?;
            let raw = r.take(size)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Array2::from_shape_vec((rows, cols), values).expect("size checked above");
            tensors.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Trailing);
        }
        Ok(Checkpoint { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
