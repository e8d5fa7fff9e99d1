//! Binary checkpoint container.
//!
//! Layout (all integers little-endian u32):
//!
//! ```text
//! "LRGC" | version | config length | config (UTF-8 key=value lines)
//!        | tensor count | { name length | name | rank | dims.. | f32 data.. }*
//! ```
//!
//! Every entry of the parameter store is written, running statistics included.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{numel, Element};

pub const MAGIC: &[u8; 4] = b"LRGC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<TensorRecord>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode<T: Element>(model: &Model<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION as usize);
    let cfg = model.config.to_kv_text();
    put_u32(&mut buf, cfg.len());
    buf.extend_from_slice(cfg.as_bytes());
    put_u32(&mut buf, model.store.len());
    for (_, p) in model.store.iter() {
        put_u32(&mut buf, p.name.len());
        buf.extend_from_slice(p.name.as_bytes());
        put_u32(&mut buf, p.tensor.rank());
        for &d in p.tensor.shape() {
            put_u32(&mut buf, d);
        }
        for v in p.tensor.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint<T: Element>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CorruptCheckpoint {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        let b = self.take(len, what)?.to_vec();
        String::from_utf8(b).map_err(|_| self.corrupt(format!("{what} is not UTF-8")))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.corrupt("bad magic bytes"));
    }
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    let cfg_len = r.u32("config length")?;
    let cfg_text = r.string(cfg_len, "config block")?;
    let config = ModelConfig::from_kv_text(&cfg_text).map_err(|e| r.corrupt(format!("config block: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32("name length")?;
        let name = r.string(name_len, "tensor name")?;
        let rank = r.u32("rank")?;
        if rank > 8 {
            return Err(r.corrupt(format!("tensor `{name}` has implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
        let n = numel(&shape);
        let raw = r.take(n.checked_mul(4).ok_or_else(|| r.corrupt("tensor size overflow"))?, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(TensorRecord { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { config, tensors })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => return Err(Error::io(path, e)),
    };
    decode(&bytes, path)
}

impl Checkpoint {
    /// Copies every stored tensor into `model`, which must have the same
    /// parameter names and shapes.
    pub fn apply<T: Element>(&self, model: &mut Model<T>) -> Result<()> {
        if self.tensors.len() != model.store.len() {
            return Err(Error::CheckpointMismatch {
                name: "*".into(),
                reason: format!(
                    "checkpoint holds {} tensors, model has {}",
                    self.tensors.len(),
                    model.store.len()
                ),
            });
        }
        let mut pending = Vec::with_capacity(self.tensors.len());
        for rec in &self.tensors {
            let id = model.store.find(&rec.name).ok_or_else(|| Error::CheckpointMismatch {
                name: rec.name.clone(),
                reason: "no parameter with this name in the model".into(),
            })?;
            let expected = model.store.tensor(id).shape();
            if expected != rec.shape.as_slice() {
                return Err(Error::CheckpointShape {
                    name: rec.name.clone(),
                    found: rec.shape.clone(),
                    expected: expected.to_vec(),
                });
            }
            pending.push((id, rec));
        }
        for (id, rec) in pending {
            model
                .store
                .assign(id, rec.data.iter().map(|&v| T::lit(v as f64)).collect())?;
        }
        Ok(())
    }

    pub fn into_model<T: Element>(self) -> Result<Model<T>> {
        let mut model = Model::new(self.config.clone(), 0)?;
        self.apply(&mut model)?;
        Ok(model)
    }
}

pub fn load_checkpoint<T: Element>(path: impl AsRef<Path>) -> Result<Model<T>> {
    read_checkpoint(path)?.into_model()
}

/// Loads into an existing model, rejecting shape or name mismatches.
pub fn load_checkpoint_into<T: Element>(path: impl AsRef<Path>, model: &mut Model<T>) -> Result<()> {
    read_checkpoint(path)?.apply(model)
}
