//! Binary checkpoint container, all integers and floats little-endian.
//!
//! ```text
//! magic        4 bytes  "FVNT"
//! version      u32      1
//! config_len   u32
//! config       config_len bytes of UTF-8 JSON (ModelConfig)
//! count        u32      number of tensors
//! per tensor:
//!   name_len   u16
//!   name       name_len bytes UTF-8
//!   ndim       u8
//!   dims       ndim x u32
//!   data       prod(dims) x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{GazeModel, ModelConfig, ModelError};

pub const MAGIC: &[u8; 4] = b"FVNT";
pub const VERSION: u32 = 1;

fn ck(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(model: &GazeModel, mut w: W) -> Result<(), ModelError> {
    let io = |e: std::io::Error| ck(e.to_string());
    let config = serde_json::to_vec(model.config()).map_err(|e| ck(e.to_string()))?;
    let tensors = model.tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        buf.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| ck("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<GazeModel, ModelError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| ck(e.to_string()))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(ck("bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(ck(format!("unsupported version {version}")));
    }
    let len = c.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(len)?).map_err(|e| ck(format!("config: {e}")))?;
    let mut model = GazeModel::new(config, 0)?;
    let count = c.u32()? as usize;
    let mut tensors = model.tensors_mut();
    if count != tensors.len() {
        return Err(ck(format!("expected {} tensors, found {count}", tensors.len())));
    }
    for t in tensors.iter_mut() {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?).map_err(|_| ck("tensor name is not UTF-8"))?;
        if name != t.name {
            return Err(ck(format!("expected tensor {}, found {name}", t.name)));
        }
        let ndim = c.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32()? as usize);
        }
        if shape != t.shape {
            return Err(ck(format!("{name}: shape {shape:?}, expected {:?}", t.shape)));
        }
        for (v, raw) in t.data.iter_mut().zip(c.take(8 * shape.iter().product::<usize>())?.chunks_exact(8)) {
            *v = f64::from_le_bytes(raw.try_into().unwrap());
            if !v.is_finite() {
                return Err(ck(format!("{name}: non-finite value")));
            }
        }
    }
    drop(tensors);
    if c.pos != bytes.len() {
        return Err(ck("trailing bytes"));
    }
    Ok(model)
}

pub fn save(model: &GazeModel, path: &Path) -> Result<(), ModelError> {
    let f = std::fs::File::create(path).map_err(|e| ck(format!("{}: {e}", path.display())))?;
    write_checkpoint(model, std::io::BufWriter::new(f))
}

pub fn load(path: &Path) -> Result<GazeModel, ModelError> {
    let f = std::fs::File::open(path).map_err(|e| ck(format!("{}: {e}", path.display())))?;
    read_checkpoint(std::io::BufReader::new(f))
}
