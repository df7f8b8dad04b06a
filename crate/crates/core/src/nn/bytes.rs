//! Portable byte format for network parameters.
//!
//! Layout: magic `MPNN`, u32 version, u32 layer count, then per layer a
//! header (u32 in_dim, u32 out_dim, u8 activation tag) followed by weights
//! and biases as little-endian f64. This is the exact payload the protocol
//! ledger measures for classifier uploads.

use super::{Activation, DenseNetwork, Layer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MPNN";
const VERSION: u32 = 1;

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
    }
}

fn activation_from_tag(tag: u8) -> Result<Activation> {
    match tag {
        0 => Ok(Activation::Identity),
        1 => Ok(Activation::Relu),
        other => Err(Error::CorruptArtifact(format!(
            "unknown activation tag {other}"
        ))),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptArtifact("truncated parameter blob".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl DenseNetwork {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers().len() as u32).to_le_bytes());
        for layer in self.layers() {
            out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
            out.push(activation_tag(layer.activation()));
            for w in &layer.weights {
                out.extend_from_slice(&w.to_le_bytes());
            }
            for b in &layer.biases {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptArtifact("bad parameter-blob magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CorruptArtifact(format!(
                "unsupported parameter-blob version {version}"
            )));
        }
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let in_dim = r.u32()? as usize;
            let out_dim = r.u32()? as usize;
            let act = activation_from_tag(r.u8()?)?;
            let weights = r.f64_vec(in_dim.checked_mul(out_dim).ok_or_else(|| {
                Error::CorruptArtifact("layer dims overflow".into())
            })?)?;
            let biases = r.f64_vec(out_dim)?;
            layers.push(Layer::new(in_dim, out_dim, act, weights, biases)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptArtifact("trailing bytes in blob".into()));
        }
        DenseNetwork::from_layers(layers)
    }
}
