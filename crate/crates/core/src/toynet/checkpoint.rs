//! Flat binary network checkpoints.
//!
//! Layout, all integers u32 little-endian and floats f64 little-endian:
//! `UMSN`, version, layer count, then per layer rows, cols, row-major
//! weights, biases and a u8 activation tag; then a trailer holding the time
//! and class embedding widths.

use std::fs;
use std::path::Path;

use super::mlp::{Activation, Layer, Mlp};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"UMSN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(net: &Mlp) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for l in net.layers() {
        out.extend_from_slice(&(l.rows as u32).to_le_bytes());
        out.extend_from_slice(&(l.cols as u32).to_le_bytes());
        for v in l.weights.iter().chain(&l.biases) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(l.activation.tag());
    }
    out.extend_from_slice(&(net.time_width() as u32).to_le_bytes());
    out.extend_from_slice(&(net.class_width() as u32).to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| Error::Format {
            what: "checkpoint",
            reason: format!("truncated at byte {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format {
            what: "checkpoint",
            reason: "layer size overflow".into(),
        })?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Mlp> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format {
            what: "checkpoint",
            reason: "bad magic".into(),
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format {
            what: "checkpoint",
            reason: format!("unsupported version {version}"),
        });
    }
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let (rows, cols) = (r.u32()?, r.u32()?);
        let weights = r.f64s(rows.saturating_mul(cols))?;
        let biases = r.f64s(rows)?;
        let activation = Activation::from_tag(r.take(1)?[0])?;
        layers.push(Layer {
            rows,
            cols,
            weights,
            biases,
            activation,
        });
    }
    let (time_width, class_width) = (r.u32()?, r.u32()?);
    if r.pos != bytes.len() {
        return Err(Error::Format {
            what: "checkpoint",
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Mlp::from_layers(layers, time_width, class_width)
}

pub fn save(path: &Path, net: &Mlp) -> Result<()> {
    fs::write(path, encode(net))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Mlp> {
    decode(&fs::read(path)?)
}
