//! Binary checkpoint format. All integers are little-endian `u32`.
//!
//! ```text
//! magic    8 bytes  "CUEINGCK"
//! version  u32      currently 1
//! config   u32 byte length, then UTF-8 `key=value` lines
//! count    u32      number of parameter records
//! record   u32 name length, UTF-8 name,
//!          u32 rank, rank × u32 extents,
//!          product(extents) × f32 values
//! ```
//!
//! Records appear in registration order. Trailing bytes are rejected.

use std::path::Path;

use super::{CueingModel, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Registry, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CUEINGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn write_checkpoint(model: &CueingModel<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = model.config().to_text();
    put_u32(&mut out, cfg.len())?;
    out.extend_from_slice(cfg.as_bytes());
    put_u32(&mut out, model.registry().len())?;
    for (_, p) in model.registry().iter() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.shape().len())?;
        for &e in p.value.shape() {
            put_u32(&mut out, e)?;
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated checkpoint while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<CueingModel<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic: not a model checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let config = ModelConfig::from_text(&r.string("config")?)?;
    let count = r.u32("record count")?;
    let mut registry = Registry::new();
    for i in 0..count {
        let name = r.string(&format!("record {i} name"))?;
        let rank = r.u32(&format!("`{name}` rank"))?;
        let shape = (0..rank).map(|_| r.u32(&format!("`{name}` shape"))).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).ok_or_else(|| Error::Checkpoint(format!("`{name}` shape overflows")))?;
        let raw = r.take(len.checked_mul(4).unwrap_or(usize::MAX), &format!("`{name}` values"))?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        registry.add(name, Tensor::from_vec(&shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes after the last record", bytes.len() - r.pos)));
    }
    CueingModel::from_registry(config, registry)
}

pub fn save_checkpoint(model: &CueingModel<f32>, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<CueingModel<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

/// Load and require the stored architecture to match `expected`; the seed is ignored.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<CueingModel<f32>> {
    let model = load_checkpoint(path)?;
    let stored = ModelConfig {
        seed: expected.seed,
        ..model.config().clone()
    };
    if let Some(diff) = stored.first_difference(expected) {
        return Err(Error::Checkpoint(format!("checkpoint config does not match ({diff})")));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> CueingModel<f32> {
        let cfg = ModelConfig {
            tokens: 4,
            width: 32,
            height: 32,
            ..ModelConfig::default()
        };
        CueingModel::init(cfg, 5).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let a = write_checkpoint(&model()).unwrap();
        let b = write_checkpoint(&read_checkpoint(&a).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut a = write_checkpoint(&model()).unwrap();
        assert!(read_checkpoint(&a[..a.len() - 1]).unwrap_err().to_string().contains("truncated"));
        a[0] = b'X';
        assert!(read_checkpoint(&a).unwrap_err().to_string().contains("magic"));
        let mut v = write_checkpoint(&model()).unwrap();
        v[8] = 9;
        assert!(read_checkpoint(&v).unwrap_err().to_string().contains("version"));
    }
}
