//! Binary checkpoint format.
//!
//! ```text
//! "SRRN"            magic
//! u16               format version
//! u8                loss code
//! u32               input width
//! u32               layer count, then per layer: u32 width, u8 activation
//! u64               parameter count
//! f64 × count       parameters in flatten order
//! u64               CRC-64/XZ of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use crc::{Crc, CRC_64_XZ};
use srr_core::net::{Activation, LayerSpec, LossKind, Network};

pub const MAGIC: &[u8; 4] = b"SRRN";
pub const VERSION: u16 = 1;
const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// A network plus the loss it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub loss: LossKind,
}

impl Checkpoint {
    pub fn new(network: Network, loss: LossKind) -> Self {
        Self { network, loss }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.network;
        let params = net.params();
        let mut out = Vec::with_capacity(32 + 5 * net.layers().len() + 8 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.loss.code());
        out.extend_from_slice(&(net.input_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
        for spec in net.specs() {
            out.extend_from_slice(&(spec.width as u32).to_le_bytes());
            out.push(spec.activation.code());
        }
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in &params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let sum = CHECKSUM.checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= 4 && &bytes[..4] == MAGIC, "not a checkpoint (bad magic bytes)");
        ensure!(bytes.len() >= 14, "checkpoint is truncated");
        let mut r = Reader { bytes, pos: 4 };
        let version = u16::from_le_bytes(r.take()?);
        if version != VERSION {
            bail!("unsupported checkpoint version {version} (this build reads version {VERSION})");
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        ensure!(
            CHECKSUM.checksum(body) == stored,
            "checkpoint checksum mismatch (file is corrupted)"
        );
        let mut r = Reader { bytes: body, pos: 6 };
        let loss_code = r.take::<1>()?[0];
        let loss = LossKind::from_code(loss_code).with_context(|| format!("unknown loss code {loss_code}"))?;
        let input_dim = u32::from_le_bytes(r.take()?) as usize;
        let n_layers = u32::from_le_bytes(r.take()?) as usize;
        let mut specs = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let width = u32::from_le_bytes(r.take()?) as usize;
            let code = r.take::<1>()?[0];
            let act = Activation::from_code(code).with_context(|| format!("unknown activation code {code}"))?;
            specs.push(LayerSpec::new(width, act));
        }
        let count = u64::from_le_bytes(r.take()?) as usize;
        let mut network = Network::zeros(input_dim, &specs)?;
        ensure!(
            count == network.num_params(),
            "checkpoint lists {count} parameters but its architecture has {}",
            network.num_params()
        );
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(f64::from_le_bytes(r.take()?));
        }
        ensure!(r.pos == body.len(), "checkpoint has {} trailing bytes", body.len() - r.pos);
        network.set_params(&params)?;
        Ok(Self { network, loss })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        ensure!(end <= self.bytes.len(), "checkpoint is truncated");
        let out = self.bytes[self.pos..end].try_into().expect("length checked");
        self.pos = end;
        Ok(out)
    }
}
