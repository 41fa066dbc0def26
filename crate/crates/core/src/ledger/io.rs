//! Ledger container (little endian): 8-byte magic, `u32` version, `u32` header
//! length, JSON header, tracked ids as `u64` triples, the three accumulator
//! arrays as `f64` in storage order, then the two credit counters as `u32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{neuron_range, ResponsibilityLedger};
use crate::binio::Reader;
use crate::nn::{NeuronId, WeightId};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"RESPLEDG";
pub const LEDGER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    tracked_layers: Vec<usize>,
    tracked_count: usize,
    step_count: u64,
    freq_neurons: Vec<NeuronId>,
    index_map: Vec<usize>,
    model_digest: Option<String>,
    config_digest: Option<String>,
}

impl ResponsibilityLedger {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            n: self.n,
            tracked_layers: self.tracked_layers.clone(),
            tracked_count: self.tracked.len(),
            step_count: self.step_count,
            freq_neurons: self.freq_neurons.clone(),
            index_map: self.index_map.clone(),
            model_digest: self.model_digest.clone(),
            config_digest: self.config_digest.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(
            16 + header.len() + 24 * self.tracked.len() + 24 * self.mag.len() + 8 * self.freq_pos.len(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&LEDGER_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for w in self.tracked.iter() {
            for v in [w.layer, w.unit, w.input] {
                out.extend_from_slice(&(v as u64).to_le_bytes());
            }
        }
        for array in [&self.mag, &self.pos, &self.neg] {
            for v in array.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for array in [&self.freq_pos, &self.freq_neg] {
            for v in array.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
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
            return Err(Error::format(origin, "not a ledger file (bad magic)"));
        }
        let version = r.u32()?;
        if version != LEDGER_VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported ledger version {version}"),
            ));
        }
        let header_len = r.u32()? as usize;
        let h: Header = serde_json::from_slice(r.take(header_len)?)?;
        if h.index_map.len() != h.n {
            return Err(Error::format(origin, "index map length differs from n"));
        }
        let mut tracked = Vec::with_capacity(h.tracked_count);
        for _ in 0..h.tracked_count {
            let layer = r.u64()? as usize;
            let unit = r.u64()? as usize;
            let input = r.u64()?;
            let input = if input == u64::MAX {
                WeightId::BIAS
            } else {
                input as usize
            };
            tracked.push(WeightId::new(layer, unit, input));
        }
        if tracked.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format(origin, "tracked weights are not sorted"));
        }
        let entries = h.tracked_count * h.n;
        let mut f64s = |len: usize| -> Result<Vec<f64>> {
            let raw = r.take(8 * len)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let mag = f64s(entries)?;
        let pos = f64s(entries)?;
        let neg = f64s(entries)?;
        let freq_len = h.freq_neurons.len() * h.n;
        let mut u32s = |len: usize| -> Result<Vec<u32>> {
            let raw = r.take(4 * len)?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect())
        };
        let freq_pos = u32s(freq_len)?;
        let freq_neg = u32s(freq_len)?;
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after ledger"));
        }
        let freq_ranges = h
            .freq_neurons
            .iter()
            .map(|&n| neuron_range(&tracked, n))
            .collect();
        Ok(Self {
            n: h.n,
            tracked_layers: h.tracked_layers,
            tracked: tracked.into(),
            mag,
            pos,
            neg,
            step_count: h.step_count,
            freq_neurons: h.freq_neurons,
            freq_ranges,
            freq_pos,
            freq_neg,
            index_map: h.index_map,
            model_digest: h.model_digest,
            config_digest: h.config_digest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes, path)
    }
}
