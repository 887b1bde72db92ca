//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "SKPT"
//! version    u32
//! meta_len   u64, then meta_len bytes of UTF-8 metadata (free text, e.g. TOML)
//! count      u64
//! count × { name_len u32, name bytes, ndim u32, ndim × u64 dims, f64 data }
//! ```

use std::fs;
use std::path::Path;

use super::{GradError, ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.params.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u64).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (_, name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GradError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(GradError::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(GradError::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = r.u64()? as usize;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| GradError::Checkpoint("metadata is not UTF-8".into()))?;
        let count = r.u64()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| GradError::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| GradError::Checkpoint(format!("{name}: shape overflow")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| GradError::Checkpoint("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.add(name, Tensor::new(data, shape)?)?;
        }
        if r.pos != bytes.len() {
            return Err(GradError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { metadata, params })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GradError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| GradError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, GradError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, GradError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: &Path, params: &ParamStore, metadata: &str) -> Result<(), GradError> {
    let ckpt = Checkpoint {
        metadata: metadata.to_string(),
        params: params.clone(),
    };
    fs::write(path, ckpt.to_bytes()).map_err(|e| GradError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, GradError> {
    let bytes = fs::read(path).map_err(|e| GradError::Checkpoint(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}
