//! Per-weight, per-example responsibility accumulators filled during training.
//!
//! For every tracked weight `i` and training position `m` the ledger keeps
//! `R_mag[i][m]`, `R_pos[i][m]` and `R_neg[i][m]`: the summed magnitude,
//! positive part and negative part of every change of `w_i` made in a step
//! where `m` was in the batch. Each batch member receives the full change.

mod io;
mod stats;

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::nn::{
    train, DeltaSink, Network, NeuronId, TrackedSet, TrainConfig, TrainReport, WeightDeltaRecord,
    WeightId,
};
use crate::{Error, Result};

pub use stats::{mean_std, Extreme, Histogram, SignedStats, EXTREME_COUNT, HISTOGRAM_BINS};

/// Default bound on `tracked weights * n * 3` (about 1.6 GB of accumulators).
pub const DEFAULT_ENTRY_CAP: usize = 200_000_000;

/// Which accumulator a query reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accumulator {
    Magnitude,
    Positive,
    Negative,
}

/// How an aggregated responsibility value is formed from the accumulators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    /// `R_pos - R_neg`, the net signed change.
    Signed,
    /// `R_mag`.
    Magnitude,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityLedger {
    n: usize,
    tracked_layers: Vec<usize>,
    tracked: Arc<[WeightId]>,
    // Example-major: entry (i, m) lives at `m * tracked.len() + i`.
    mag: Vec<f64>,
    pos: Vec<f64>,
    neg: Vec<f64>,
    step_count: u64,
    /// Units of the final layer when it is tracked, with their tracked-id ranges.
    freq_neurons: Vec<NeuronId>,
    freq_ranges: Vec<(usize, usize)>,
    // Neuron-major: entry (k, m) lives at `k * n + m`.
    freq_pos: Vec<u32>,
    freq_neg: Vec<u32>,
    index_map: Vec<usize>,
    model_digest: Option<String>,
    config_digest: Option<String>,
}

impl ResponsibilityLedger {
    pub fn new(network: &Network, tracked_layers: &[usize], n: usize) -> Result<Self> {
        Self::with_cap(network, tracked_layers, n, DEFAULT_ENTRY_CAP)
    }

    /// Fails before allocating when `tracked * n * 3` exceeds `cap`.
    pub fn with_cap(
        network: &Network,
        tracked_layers: &[usize],
        n: usize,
        cap: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let set = TrackedSet::new(network, tracked_layers)?;
        let tracked = set.len();
        let entries = tracked.saturating_mul(n).saturating_mul(3);
        if entries > cap {
            return Err(Error::LedgerTooLarge {
                entries,
                tracked,
                n,
                cap,
            });
        }
        let last = network.last_layer();
        let (freq_neurons, freq_ranges) = if set.layers().contains(&last) {
            let ids = set.ids();
            (0..network.layers()[last].units())
                .map(|unit| {
                    let neuron = NeuronId { layer: last, unit };
                    (neuron, neuron_range(ids, neuron))
                })
                .unzip()
        } else {
            (Vec::new(), Vec::new())
        };
        let freq_len = freq_neurons.len() * n;
        Ok(Self {
            n,
            tracked_layers: set.layers().to_vec(),
            tracked: set.ids().clone(),
            mag: vec![0.0; tracked * n],
            pos: vec![0.0; tracked * n],
            neg: vec![0.0; tracked * n],
            step_count: 0,
            freq_neurons,
            freq_ranges,
            freq_pos: vec![0; freq_len],
            freq_neg: vec![0; freq_len],
            index_map: (0..n).collect(),
            model_digest: None,
            config_digest: None,
        })
    }

    /// Stable dataset indices of the training positions, one per position.
    pub fn with_index_map(mut self, index_map: Vec<usize>) -> Result<Self> {
        if index_map.len() != self.n {
            return Err(Error::shape("ledger index map", self.n, index_map.len()));
        }
        self.index_map = index_map;
        Ok(self)
    }

    pub fn with_config_digest(mut self, digest: impl Into<String>) -> Self {
        self.config_digest = Some(digest.into());
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tracked(&self) -> &[WeightId] {
        &self.tracked
    }

    pub fn tracked_layers(&self) -> &[usize] {
        &self.tracked_layers
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn index_map(&self) -> &[usize] {
        &self.index_map
    }

    pub fn model_digest(&self) -> Option<&str> {
        self.model_digest.as_deref()
    }

    pub fn config_digest(&self) -> Option<&str> {
        self.config_digest.as_deref()
    }

    /// Binds the ledger to the network state it explains.
    pub fn seal(&mut self, network: &Network) {
        self.model_digest = Some(network.digest());
    }

    /// Rejects a network other than the one the ledger was sealed with.
    pub fn check_model(&self, network: &Network) -> Result<()> {
        self.check_digest(&network.digest())
    }

    pub fn check_digest(&self, model_digest: &str) -> Result<()> {
        match &self.model_digest {
            Some(d) if d == model_digest => Ok(()),
            other => Err(Error::StaleLedger {
                ledger_digest: other.clone().unwrap_or_else(|| "<unsealed>".to_string()),
                model_digest: model_digest.to_string(),
            }),
        }
    }

    pub fn is_tracked(&self, weight: WeightId) -> bool {
        self.tracked.binary_search(&weight).is_ok()
    }

    pub fn tracked_index(&self, weight: WeightId) -> Result<usize> {
        self.tracked
            .binary_search(&weight)
            .map_err(|_| Error::UntrackedWeight {
                weight,
                tracked_layers: self.tracked_layers.clone(),
            })
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if self.tracked_layers.contains(&layer) {
            Ok(())
        } else {
            Err(Error::UntrackedLayer {
                layer,
                tracked_layers: self.tracked_layers.clone(),
            })
        }
    }

    fn check_position(&self, m: usize) -> Result<()> {
        if m < self.n {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                what: "ledger positions",
                index: m,
                len: self.n,
            })
        }
    }

    /// Applies one step. The record must cover exactly the tracked weights; on
    /// error the ledger is left unchanged.
    pub fn record(&mut self, rec: &WeightDeltaRecord) -> Result<()> {
        for &m in &rec.batch_indices {
            self.check_position(m)?;
        }
        if !Arc::ptr_eq(&rec.weights, &self.tracked) && rec.weights[..] != self.tracked[..] {
            return Err(Error::shape(
                "delta record weights",
                format!("{} tracked weights", self.tracked.len()),
                format!("{} weights", rec.weights.len()),
            ));
        }
        if rec.deltas.len() != self.tracked.len() {
            return Err(Error::shape(
                "delta record",
                self.tracked.len(),
                rec.deltas.len(),
            ));
        }
        let t = self.tracked.len();
        let deltas: Vec<f64> = rec.deltas.iter().map(|&d| d as f64).collect();
        for &m in &rec.batch_indices {
            let row = m * t..(m + 1) * t;
            let (mag, pos, neg) = (
                &mut self.mag[row.clone()],
                &mut self.pos[row.clone()],
                &mut self.neg[row],
            );
            for (i, &d) in deltas.iter().enumerate() {
                mag[i] += d.abs();
                if d > 0.0 {
                    pos[i] += d;
                } else if d < 0.0 {
                    neg[i] -= d;
                }
            }
        }
        for (k, &(start, end)) in self.freq_ranges.iter().enumerate() {
            let net: f64 = deltas[start..end].iter().sum();
            let counter = match net.partial_cmp(&0.0) {
                Some(Ordering::Greater) => &mut self.freq_pos,
                Some(Ordering::Less) => &mut self.freq_neg,
                _ => continue,
            };
            for &m in &rec.batch_indices {
                counter[k * self.n + m] += 1;
            }
        }
        self.step_count += 1;
        Ok(())
    }

    /// `R[i][m]` for one accumulator.
    pub fn value(&self, acc: Accumulator, weight: WeightId, m: usize) -> Result<f64> {
        let i = self.tracked_index(weight)?;
        self.check_position(m)?;
        Ok(self.array(acc)[m * self.tracked.len() + i])
    }

    fn array(&self, acc: Accumulator) -> &[f64] {
        match acc {
            Accumulator::Magnitude => &self.mag,
            Accumulator::Positive => &self.pos,
            Accumulator::Negative => &self.neg,
        }
    }

    /// The length-`n` accumulator row of one weight.
    pub fn weight_values(&self, acc: Accumulator, weight: WeightId) -> Result<Vec<f64>> {
        let i = self.tracked_index(weight)?;
        Ok(self.column(acc, i))
    }

    fn column(&self, acc: Accumulator, i: usize) -> Vec<f64> {
        let t = self.tracked.len();
        self.array(acc).iter().skip(i).step_by(t).copied().collect()
    }

    /// Positions ranked by `R_mag` of `weight`, descending, ties to the lowest position.
    pub fn most_responsible(&self, weight: WeightId, k: usize) -> Result<Vec<(usize, f64)>> {
        let scores = self.weight_values(Accumulator::Magnitude, weight)?;
        top_k(&scores, k)
    }

    /// Per-position sum of `R_mag` over `weights`; reduces to one weight's row.
    pub fn summed_magnitude(&self, weights: &[WeightId]) -> Result<Vec<f64>> {
        let cols = weights
            .iter()
            .map(|&w| self.tracked_index(w))
            .collect::<Result<Vec<_>>>()?;
        let t = self.tracked.len();
        Ok((0..self.n)
            .map(|m| cols.iter().map(|&i| self.mag[m * t + i]).sum())
            .collect())
    }

    /// Per-position sum of `R_mag` over every tracked weight of `layer`.
    pub fn layer_magnitude(&self, layer: usize) -> Result<Vec<f64>> {
        self.check_layer(layer)?;
        let (start, end) = layer_range(&self.tracked, layer);
        let t = self.tracked.len();
        Ok((0..self.n)
            .map(|m| self.mag[m * t + start..m * t + end].iter().sum())
            .collect())
    }

    fn neuron_slice(&self, neuron: NeuronId) -> Result<(usize, usize)> {
        self.check_layer(neuron.layer)?;
        let range = neuron_range(&self.tracked, neuron);
        if range.0 == range.1 {
            return Err(Error::IndexOutOfRange {
                what: "layer units",
                index: neuron.unit,
                len: self
                    .tracked
                    .iter()
                    .filter(|w| w.layer == neuron.layer)
                    .map(|w| w.unit + 1)
                    .max()
                    .unwrap_or(0),
            });
        }
        Ok(range)
    }

    /// Per-position responsibility of a neuron: the sum over its incoming
    /// weights and bias of `R_pos - R_neg` (signed) or `R_mag` (magnitude).
    pub fn neuron_responsibility(&self, neuron: NeuronId, how: Aggregate) -> Result<Vec<f64>> {
        let (start, end) = self.neuron_slice(neuron)?;
        let t = self.tracked.len();
        Ok((0..self.n)
            .map(|m| {
                let r = m * t + start..m * t + end;
                match how {
                    Aggregate::Magnitude => self.mag[r].iter().sum(),
                    Aggregate::Signed => {
                        let p: f64 = self.pos[r.clone()].iter().sum();
                        let q: f64 = self.neg[r].iter().sum();
                        p - q
                    }
                }
            })
            .collect())
    }

    /// Class-by-neuron totals over the final layer. `labels[m]` is the label
    /// of training position `m`.
    pub fn interclass_matrix(
        &self,
        network: &Network,
        labels: &[usize],
        how: Aggregate,
    ) -> Result<InterClassMatrix> {
        let last = network.last_layer();
        self.check_layer(last)?;
        if labels.len() != self.n {
            return Err(Error::shape("interclass labels", self.n, labels.len()));
        }
        let classes = network.classes();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::IndexOutOfRange {
                what: "classes",
                index: bad,
                len: classes,
            });
        }
        let mut values = vec![vec![0.0; classes]; classes];
        for unit in 0..classes {
            let per_example = self.neuron_responsibility(NeuronId { layer: last, unit }, how)?;
            for (m, v) in per_example.into_iter().enumerate() {
                values[labels[m]][unit] += v;
            }
        }
        Ok(InterClassMatrix {
            values,
            aggregate: how,
        })
    }

    /// The final-layer neurons with frequency counters (empty when the final
    /// layer is not tracked).
    pub fn freq_neurons(&self) -> &[NeuronId] {
        &self.freq_neurons
    }

    /// Credit counts per position for one final-layer neuron. A position is
    /// credited once per step it appears in when the neuron's incoming weights
    /// changed by a positive (or negative) net amount.
    pub fn freq(&self, neuron: NeuronId, positive: bool) -> Result<&[u32]> {
        let k = self
            .freq_neurons
            .iter()
            .position(|&n| n == neuron)
            .ok_or(Error::UntrackedLayer {
                layer: neuron.layer,
                tracked_layers: self.tracked_layers.clone(),
            })?;
        let counters = if positive { &self.freq_pos } else { &self.freq_neg };
        Ok(&counters[k * self.n..(k + 1) * self.n])
    }

    /// For each position, how many of the neuron's incoming weights (and bias)
    /// have it as their `R_pos` (or `R_neg`) argmax.
    pub fn argmax_counts(&self, neuron: NeuronId, positive: bool) -> Result<Vec<u32>> {
        let (start, end) = self.neuron_slice(neuron)?;
        let acc = if positive {
            Accumulator::Positive
        } else {
            Accumulator::Negative
        };
        let mut counts = vec![0u32; self.n];
        for i in start..end {
            let col = self.column(acc, i);
            let best = argmax_f64(&col);
            if col[best] > 0.0 {
                counts[best] += 1;
            }
        }
        Ok(counts)
    }

    /// Positions most frequently credited for `neuron`: credit count
    /// descending, then [`argmax_counts`](Self::argmax_counts) descending,
    /// then lowest position.
    pub fn most_frequent(&self, neuron: NeuronId, positive: bool, k: usize) -> Result<Vec<usize>> {
        let freq = self.freq(neuron, positive)?;
        let second = self.argmax_counts(neuron, positive)?;
        if k == 0 || k > self.n {
            return Err(Error::config("k", format!("must be in 1..={}", self.n)));
        }
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| {
            freq[b]
                .cmp(&freq[a])
                .then(second[b].cmp(&second[a]))
                .then(a.cmp(&b))
        });
        order.truncate(k);
        Ok(order)
    }

    /// Signed net values `R_pos - R_neg` of every (weight, position) pair of
    /// `layer`, weight-major in tracked order.
    pub fn signed_values(&self, layer: usize) -> Result<Vec<f64>> {
        self.check_layer(layer)?;
        let (start, end) = layer_range(&self.tracked, layer);
        let t = self.tracked.len();
        let mut out = Vec::with_capacity((end - start) * self.n);
        for i in start..end {
            out.extend((0..self.n).map(|m| self.pos[m * t + i] - self.neg[m * t + i]));
        }
        Ok(out)
    }

    /// Weight ids of `layer` in the order used by [`signed_values`](Self::signed_values).
    pub fn layer_weights(&self, layer: usize) -> Result<&[WeightId]> {
        self.check_layer(layer)?;
        let (start, end) = layer_range(&self.tracked, layer);
        Ok(&self.tracked[start..end])
    }

    pub fn signed_stats(&self, layer: usize) -> Result<SignedStats> {
        let values = self.signed_values(layer)?;
        let weights = self.layer_weights(layer)?;
        Ok(SignedStats::compute(layer, &values, weights, self.n))
    }
}

impl DeltaSink for ResponsibilityLedger {
    fn observe(&mut self, record: &WeightDeltaRecord, _network: &Network) -> Result<()> {
        self.record(record)
    }
}

/// Class-by-neuron aggregation: rows are training labels, columns output neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterClassMatrix {
    pub values: Vec<Vec<f64>>,
    pub aggregate: Aggregate,
}

impl InterClassMatrix {
    pub fn classes(&self) -> usize {
        self.values.len()
    }

    /// Column of each row's maximum, ties to the lowest column.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.values.iter().map(|row| argmax_f64(row)).collect()
    }

    /// Rows whose maximum lies on the diagonal.
    pub fn diagonal_rows(&self) -> usize {
        self.row_argmax()
            .iter()
            .enumerate()
            .filter(|(r, c)| r == *c)
            .count()
    }

    pub fn to_csv(&self, class_names: Option<&[String]>) -> String {
        let name = |i: usize| {
            class_names
                .and_then(|n| n.get(i).cloned())
                .unwrap_or_else(|| i.to_string())
        };
        let mut out = String::from("class");
        for k in 0..self.classes() {
            out.push_str(&format!(",neuron_{}", name(k)));
        }
        out.push('\n');
        for (c, row) in self.values.iter().enumerate() {
            out.push_str(&name(c));
            for v in row {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains `network` on `dataset` while filling a ledger over
/// `config.tracked_layers`. The returned ledger is sealed with the trained
/// network and maps positions to the dataset's stable indices.
pub fn train_with_ledger(
    network: &mut Network,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(TrainReport, ResponsibilityLedger)> {
    config.validate()?;
    let mut ledger = ResponsibilityLedger::new(network, &config.tracked_layers, dataset.len())?
        .with_index_map(dataset.indices())?
        .with_config_digest(config.digest());
    let report = train(network, dataset, config, &mut ledger)?;
    ledger.seal(network);
    Ok((report, ledger))
}

/// Top `k` positions by score, descending, ties to the lowest position.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 || k > scores.len() {
        return Err(Error::config(
            "k",
            format!("must be in 1..={}, got {k}", scores.len()),
        ));
    }
    let cmp = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    Ok(order.into_iter().map(|m| (m, scores[m])).collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_f64(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn layer_range(ids: &[WeightId], layer: usize) -> (usize, usize) {
    let start = ids.partition_point(|w| w.layer < layer);
    let end = ids.partition_point(|w| w.layer <= layer);
    (start, end)
}

fn neuron_range(ids: &[WeightId], neuron: NeuronId) -> (usize, usize) {
    let key = |w: &WeightId| (w.layer, w.unit);
    let target = (neuron.layer, neuron.unit);
    let start = ids.partition_point(|w| key(w) < target);
    let end = ids.partition_point(|w| key(w) <= target);
    (start, end)
}
