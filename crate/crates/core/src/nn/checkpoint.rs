//! Binary parameter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "FRLB" | version u32 | metadata length u32 | metadata JSON
//! | tensor count u32
//! | per tensor: name length u32 | name UTF-8 | rank u32 | dims u64 * rank | values f64 * product(dims)
//! ```

use std::path::Path;

use super::{Module, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FRLB";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Checkpoint {
            metadata,
            params: Vec::new(),
        }
    }

    /// Appends every parameter of `module` as `prefix.name`.
    pub fn add_module<M: Module>(&mut self, prefix: &str, module: &M) {
        for (name, t) in module.named_params() {
            self.params.push((format!("{prefix}.{name}"), t.clone()));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies `prefix.*` tensors into `module`, checking names and shapes.
    pub fn load_module<M: Module>(&self, prefix: &str, module: &mut M) -> Result<()> {
        let names: Vec<String> = module.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, dst) in names.iter().zip(module.params_mut()) {
            let key = format!("{prefix}.{name}");
            let src = self
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if src.shape() != dst.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {key} has shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.metadata)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let metadata = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()?;
        let mut params = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { metadata, params })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{seeded_rng, Activation, Dense, Lstm};

    #[test]
    fn round_trip() {
        let mut rng = seeded_rng(9);
        let d = Dense::new(3, 2, Activation::Relu, &mut rng);
        let l = Lstm::new(2, 4, &mut rng);
        let mut ck = Checkpoint::new(serde_json::json!({"kind": "test"}));
        ck.add_module("head", &d);
        ck.add_module("seq", &l);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut d2 = Dense::zeros(3, 2, Activation::Relu);
        back.load_module("head", &mut d2).unwrap();
        assert_eq!(d2, d);
        let mut wrong = Dense::zeros(4, 2, Activation::Relu);
        assert!(back.load_module("head", &mut wrong).is_err());
        assert!(back.load_module("missing", &mut d2).is_err());
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut bytes = Checkpoint::new(serde_json::Value::Null).to_bytes().unwrap();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        bytes.truncate(6);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
