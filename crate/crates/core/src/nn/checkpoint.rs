//! Binary checkpoint container.
//!
//! Layout (little endian): 8-byte magic, `u32` format version, `u32` header
//! length, JSON header (input shape, layer descriptors, loss, seed), `u64`
//! parameter count, then the parameters as `f32` in [`WeightId`] order.
//!
//! [`WeightId`]: super::WeightId

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LayerSpec, Loss, Network, Shape};
use crate::binio::Reader;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"RESPNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    input: Shape,
    layers: Vec<LayerSpec>,
    loss: Loss,
    seed: u64,
}

impl Network {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            input: self.input,
            layers: self.layer_specs(),
            loss: self.loss.clone(),
            seed: self.seed,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(24 + header.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin,
        };
        if r.take(8)? != MAGIC {
            return Err(Error::format(origin, "not a network checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        let mut net = Network::zeroed(header.input, &header.layers, header.loss, header.seed)?;
        let count = r.u64()? as usize;
        if count != net.params.len() {
            return Err(Error::format(
                origin,
                format!(
                    "parameter count {count} does not match architecture ({})",
                    net.params.len()
                ),
            ));
        }
        let raw = r.take(4 * count)?;
        for (p, chunk) in net.params.iter_mut().zip(raw.chunks_exact(4)) {
            *p = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        Ok(net)
    }

    /// SHA-256 of the checkpoint encoding, hex encoded. Identifies both
    /// architecture and parameter values.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

pub fn save_checkpoint(network: &Network, path: &Path) -> Result<()> {
    fs::write(path, network.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let bytes = fs::read(path)?;
    Network::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::Architecture;

    #[test]
    fn save_load_reproduces_forward_bit_for_bit() {
        let net = Architecture::LeNet5.build(Shape::new(1, 28, 28), 10, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        let x: Vec<f32> = (0..784).map(|i| ((i * 31 % 255) as f32) / 255.0).collect();
        let a = net.predict(&x).unwrap();
        let b = back.predict(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(net.digest(), back.digest());
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let net = Architecture::Mlp { hidden: 3 }
            .build(Shape::flat(4), 2, 0)
            .unwrap();
        let bytes = net.to_bytes();
        let err = Network::from_bytes(&bytes[..bytes.len() - 3], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
        let err = Network::from_bytes(b"garbage!", Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }
}
