//! Binary checkpoint format. All integers are little-endian `u32`, all
//! parameters little-endian `f64`:
//!
//! ```text
//! magic        8 bytes  "RAEDIFF1"
//! version      u32      1
//! height       u32
//! width        u32
//! channels     u32
//! embed_dim    u32
//! layer_count  u32
//! per layer:
//!     rows     u32      (outputs)
//!     cols     u32      (inputs)
//!     weights  rows * cols f64, row-major
//!     bias     rows f64
//! ```

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::tensor::Shape;

use super::network::{Dense, TinyDenoiser};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RAEDIFF1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &TinyDenoiser, mut out: W) -> std::io::Result<()> {
    let shape = model.shape();
    out.write_all(CHECKPOINT_MAGIC)?;
    for v in [
        CHECKPOINT_VERSION,
        shape.height as u32,
        shape.width as u32,
        shape.channels as u32,
        model.embed_dim() as u32,
        model.layers().len() as u32,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    for layer in model.layers() {
        out.write_all(&(layer.outputs() as u32).to_le_bytes())?;
        out.write_all(&(layer.inputs() as u32).to_le_bytes())?;
        for w in layer.weights.iter().chain(layer.bias.iter()) {
            out.write_all(&w.to_le_bytes())?;
        }
    }
    out.flush()
}

pub fn save_checkpoint(model: &TinyDenoiser, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TinyDenoiser> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::DimensionMismatch(format!("{what} is too large")))?;
        let b = self.take(len, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<TinyDenoiser> {
    if bytes.len() < CHECKPOINT_MAGIC.len() {
        return Err(if CHECKPOINT_MAGIC.starts_with(bytes) {
            Error::Truncated("file ends inside the magic bytes".into())
        } else {
            Error::BadMagic
        });
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    let mut cur = Cursor { bytes, pos: 8 };
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let height = cur.u32("height")? as usize;
    let width = cur.u32("width")? as usize;
    let channels = cur.u32("channels")? as usize;
    let embed_dim = cur.u32("embedding width")? as usize;
    let layer_count = cur.u32("layer count")? as usize;
    let shape = Shape::new(height, width, channels);
    if shape.is_empty() || layer_count == 0 {
        return Err(Error::DimensionMismatch(format!(
            "image {shape} with {layer_count} layers"
        )));
    }

    let mut layers = Vec::with_capacity(layer_count.min(64));
    for i in 0..layer_count {
        let rows = cur.u32("layer rows")? as usize;
        let cols = cur.u32("layer cols")? as usize;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::DimensionMismatch(format!("layer {i} is too large")))?;
        let weights = cur.f64s(count, "layer weights")?;
        let bias = cur.f64s(rows, "layer bias")?;
        let weights = Array2::from_shape_vec((rows, cols), weights)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        layers.push(Dense {
            weights,
            bias: Array1::from_vec(bias),
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} trailing bytes after the last layer",
            bytes.len() - cur.pos
        )));
    }
    TinyDenoiser::from_layers(shape, embed_dim, layers)
}
