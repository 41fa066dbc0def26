//! Plain SGD with per-step weight-change records.

use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{argmax, Network, WeightId};
use crate::dataset::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Layer indices whose parameter changes are recorded.
    pub tracked_layers: Vec<usize>,
    /// Seeds the per-epoch shuffle.
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 1,
            epochs: 1,
            tracked_layers: Vec::new(),
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::config(
                "learning_rate",
                format!("must be finite and >= 0, got {}", self.learning_rate),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        Ok(())
    }

    /// SHA-256 (hex) of the JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Tracks the first and last parameterized layers of `network`.
    pub fn track_first_and_last(mut self, network: &Network) -> Self {
        let layers = network.param_layers();
        self.tracked_layers = vec![layers[0], *layers.last().expect("non-empty")];
        self.tracked_layers.dedup();
        self
    }
}

/// The weights whose changes a training run records, in flat parameter order.
#[derive(Debug, Clone)]
pub struct TrackedSet {
    layers: Vec<usize>,
    ids: Arc<[WeightId]>,
    ranges: Vec<Range<usize>>,
}

impl TrackedSet {
    pub fn new(network: &Network, layers: &[usize]) -> Result<Self> {
        let mut layers = layers.to_vec();
        layers.sort_unstable();
        layers.dedup();
        let mut ids = Vec::new();
        let mut ranges = Vec::new();
        for &l in &layers {
            let layer = network.layers().get(l).ok_or_else(|| {
                Error::config(
                    "tracked_layers",
                    format!("layer {l} does not exist ({} layers)", network.layers().len()),
                )
            })?;
            if !layer.has_params() {
                return Err(Error::config(
                    "tracked_layers",
                    format!("layer {l} has no parameters"),
                ));
            }
            ids.extend(network.layer_weight_ids(l));
            ranges.push(layer.param_range());
        }
        Ok(Self {
            layers,
            ids: ids.into(),
            ranges,
        })
    }

    pub fn none() -> Self {
        Self {
            layers: Vec::new(),
            ids: Arc::from(Vec::new()),
            ranges: Vec::new(),
        }
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn ids(&self) -> &Arc<[WeightId]> {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Realized signed change of every tracked weight during one SGD step.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDeltaRecord {
    pub step_index: u64,
    /// Positions (within the training set) of the batch members.
    pub batch_indices: Vec<usize>,
    pub weights: Arc<[WeightId]>,
    /// `w' - w` for each entry of `weights`, exact zeros included.
    pub deltas: Vec<f32>,
}

impl WeightDeltaRecord {
    pub fn get(&self, id: WeightId) -> Option<f32> {
        self.weights
            .binary_search(&id)
            .ok()
            .map(|i| self.deltas[i])
    }
}

/// Consumer of per-step records; receives them in step order together with
/// the network state after the step.
pub trait DeltaSink {
    fn observe(&mut self, record: &WeightDeltaRecord, network: &Network) -> Result<()>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoSink;

impl DeltaSink for NoSink {
    fn observe(&mut self, _: &WeightDeltaRecord, _: &Network) -> Result<()> {
        Ok(())
    }
}

impl DeltaSink for Vec<WeightDeltaRecord> {
    fn observe(&mut self, record: &WeightDeltaRecord, _: &Network) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

impl<S: DeltaSink + ?Sized> DeltaSink for &mut S {
    fn observe(&mut self, record: &WeightDeltaRecord, network: &Network) -> Result<()> {
        (**self).observe(record, network)
    }
}

/// Adapts a closure into a [`DeltaSink`].
pub struct FnSink<F>(pub F);

impl<F> DeltaSink for FnSink<F>
where
    F: FnMut(&WeightDeltaRecord, &Network) -> Result<()>,
{
    fn observe(&mut self, record: &WeightDeltaRecord, network: &Network) -> Result<()> {
        (self.0)(record, network)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub input: &'a [f32],
    pub label: usize,
    /// Position of the example in the training set.
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub record: WeightDeltaRecord,
    /// Mean batch loss before the update.
    pub loss: f64,
    /// Batch members predicted correctly before the update.
    pub correct: usize,
}

/// One plain-SGD step on the mean cross-entropy (or squared error) of `batch`.
///
/// The network is left untouched when the loss or any gradient is non-finite.
pub fn sgd_step(
    network: &mut Network,
    batch: &[BatchItem<'_>],
    learning_rate: f32,
    tracked: &TrackedSet,
    step_index: u64,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::config("batch", "batch must not be empty"));
    }
    if !learning_rate.is_finite() || learning_rate < 0.0 {
        return Err(Error::config(
            "learning_rate",
            format!("must be finite and >= 0, got {learning_rate}"),
        ));
    }
    let mut grad = vec![0f32; network.param_count()];
    let mut loss = 0f64;
    let mut correct = 0;
    for item in batch {
        network.check_input(item.input)?;
        network.check_label(item.label)?;
        let trace = network.forward_unchecked(item.input);
        loss += network.example_loss(&trace, item.label);
        if argmax(trace.output()) == item.label {
            correct += 1;
        }
        network.backward(&trace, item.label, &mut grad);
    }
    loss /= batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            step: step_index,
            what: "loss",
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            step: step_index,
            what: "gradient",
        });
    }

    let scale = learning_rate / batch.len() as f32;
    let mut deltas = Vec::with_capacity(tracked.len());
    let params = network.params_mut();
    let mut next_tracked = tracked.ranges.iter().peekable();
    let mut p = 0;
    while p < params.len() {
        match next_tracked.peek() {
            Some(r) if r.start == p => {
                for i in r.start..r.end {
                    let old = params[i];
                    let new = old - scale * grad[i];
                    params[i] = new;
                    deltas.push(new - old);
                }
                p = r.end;
                next_tracked.next();
            }
            Some(r) => {
                let end = r.start;
                update(&mut params[p..end], &grad[p..end], scale);
                p = end;
            }
            None => {
                update(&mut params[p..], &grad[p..], scale);
                p = params.len();
            }
        }
    }

    Ok(StepOutcome {
        record: WeightDeltaRecord {
            step_index,
            batch_indices: batch.iter().map(|b| b.index).collect(),
            weights: Arc::clone(&tracked.ids),
            deltas,
        },
        loss,
        correct,
    })
}

fn update(params: &mut [f32], grad: &[f32], scale: f32) {
    for (w, g) in params.iter_mut().zip(grad) {
        *w -= scale * g;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of examples classified correctly before their update.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
}

/// Trains `network` in place, handing every step's record to `sink`.
///
/// Emits exactly `epochs * ceil(n / batch_size)` records. Examples are
/// reshuffled every epoch from a ChaCha8 stream seeded with
/// `config.rng_seed`; batch indices are positions in `dataset`.
pub fn train<S: DeltaSink>(
    network: &mut Network,
    dataset: &Dataset,
    config: &TrainConfig,
    mut sink: S,
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.shape() != network.input_shape() {
        return Err(Error::shape(
            "training set",
            network.input_shape(),
            dataset.shape(),
        ));
    }
    let tracked = TrackedSet::new(network, &config.tracked_layers)?;
    let examples = dataset.examples();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<BatchItem<'_>> = chunk
                .iter()
                .map(|&pos| BatchItem {
                    input: &examples[pos].pixels,
                    label: examples[pos].label,
                    index: pos,
                })
                .collect();
            let outcome = sgd_step(
                network,
                &batch,
                config.learning_rate,
                &tracked,
                report.steps,
            )?;
            sink.observe(&outcome.record, network)?;
            loss_sum += outcome.loss * chunk.len() as f64;
            correct += outcome.correct;
            report.steps += 1;
        }
        report.epochs.push(EpochStats {
            epoch,
            mean_loss: loss_sum / examples.len() as f64,
            accuracy: correct as f64 / examples.len() as f64,
        });
    }
    Ok(report)
}
