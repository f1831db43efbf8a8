//! Binary checkpoint, all integers little-endian `u32`:
//!
//! ```text
//! "CLMT" version count
//! count × { path_len path rank dims... values(f32 LE)... }
//! sigma_len sigma(f32 LE)...
//! config_len config(JSON)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CLMT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub sigma: Vec<f64>,
    /// JSON echo of the run configuration, kept verbatim.
    pub config_json: String,
}

fn put(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put(&mut out, VERSION as usize)?;
        put(&mut out, self.params.len())?;
        for (path, t) in self.params.iter() {
            put(&mut out, path.len())?;
            out.extend_from_slice(path.as_bytes());
            put(&mut out, t.rank())?;
            for &d in t.shape() {
                put(&mut out, d)?;
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        put(&mut out, self.sigma.len())?;
        for &s in &self.sigma {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
        put(&mut out, self.config_json.len())?;
        out.extend_from_slice(self.config_json.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()?;
            let path = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("path is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()?;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| Error::Checkpoint("size overflow".into()))?;
            let data = r.f32s(n)?;
            let t = Tensor::new(dims, data).map_err(|e| Error::Checkpoint(format!("{path}: {e}")))?;
            params
                .insert(path.clone(), t)
                .map_err(|_| Error::Checkpoint(format!("duplicate tensor `{path}`")))?;
        }
        let ns = r.u32()?;
        let sigma = r.f32s(ns)?;
        let clen = r.u32()?;
        let config_json = std::str::from_utf8(r.take(clen)?)
            .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?
            .to_string();
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            params,
            sigma,
            config_json,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
