//! Mislabel hunting: walk the training set in some order, fix the flipped
//! labels met on the way, and retrain from scratch at fixed checkpoints.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{flip_labels, Dataset, FlipRecord};
use crate::eval::accuracy;
use crate::ledger::{train_with_ledger, ResponsibilityLedger};
use crate::nn::arch::Architecture;
use crate::nn::{train, NoSink, TrainConfig};
use crate::{Error, Result};

/// Mixed into the seed of the random ordering so it never shares a stream
/// with training.
const ORDERING_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum OrderingKind {
    Responsibility,
    Random,
}

impl fmt::Display for OrderingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderingKind::Responsibility => "responsibility",
            OrderingKind::Random => "random",
        })
    }
}

impl FromStr for OrderingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "responsibility" => Ok(OrderingKind::Responsibility),
            "random" => Ok(OrderingKind::Random),
            _ => Err(Error::config(
                "ordering",
                format!("expected responsibility or random, got {s:?}"),
            )),
        }
    }
}

impl From<OrderingKind> for String {
    fn from(o: OrderingKind) -> Self {
        o.to_string()
    }
}

impl TryFrom<String> for OrderingKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebuggingCurve {
    pub ordering: OrderingKind,
    pub seed: u64,
    pub checkpoints: Vec<f64>,
    /// Number of examples inspected at each checkpoint.
    pub inspected_at: Vec<usize>,
    /// Flipped labels corrected so far at each checkpoint.
    pub found_at: Vec<usize>,
    /// Test accuracy of a model retrained from scratch at each checkpoint.
    pub accuracy_at: Vec<f64>,
    pub total_flips: usize,
}

impl DebuggingCurve {
    /// Corrections found once `fraction` of the data has been inspected.
    pub fn found_at_fraction(&self, fraction: f64) -> Option<usize> {
        self.checkpoints
            .iter()
            .position(|c| (c - fraction).abs() < 1e-9)
            .map(|i| self.found_at[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ordering,seed,fraction,inspected,found,accuracy\n");
        for i in 0..self.checkpoints.len() {
            out.push_str(&format!(
                "{},{},{:.4},{},{},{:.6}\n",
                self.ordering,
                self.seed,
                self.checkpoints[i],
                self.inspected_at[i],
                self.found_at[i],
                self.accuracy_at[i]
            ));
        }
        out
    }
}

/// Recipe for the models trained during a debugging run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugConfig {
    pub architecture: Architecture,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub checkpoint_step: f64,
}

impl Default for DebugConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::DebugCnn,
            learning_rate: 0.01,
            batch_size: 1,
            epochs: 3,
            checkpoint_step: 0.05,
        }
    }
}

impl DebugConfig {
    fn train_config(&self, seed: u64, tracked_layers: Vec<usize>) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            tracked_layers,
            rng_seed: seed,
        }
    }

    /// `step, 2 * step, ...` up to and including 1.0.
    pub fn checkpoints(&self) -> Result<Vec<f64>> {
        let step = self.checkpoint_step;
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::config(
                "checkpoint_step",
                format!("must lie in (0, 1], got {step}"),
            ));
        }
        let count = (1.0 / step - 1e-9).ceil() as usize;
        Ok((1..=count)
            .map(|j| if j == count { 1.0 } else { j as f64 * step })
            .collect())
    }
}

/// Positions ranked by the per-example sum of first-layer `R_mag`,
/// descending, ties to the lowest position.
pub fn responsibility_order(ledger: &ResponsibilityLedger, first_layer: usize) -> Result<Vec<usize>> {
    if !ledger.tracked_layers().contains(&first_layer) {
        return Err(Error::config(
            "tracked_layers",
            format!(
                "responsibility ordering needs the first layer ({first_layer}) tracked, ledger tracks {:?}",
                ledger.tracked_layers()
            ),
        ));
    }
    let scores = ledger.layer_magnitude(first_layer)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order)
}

pub fn random_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ ORDERING_SEED_SALT));
    order
}

/// Retrains from scratch on a label vector, memoized because successive
/// checkpoints often leave the labels unchanged.
pub struct Retrainer<'a> {
    config: &'a DebugConfig,
    test: &'a Dataset,
    seed: u64,
    cache: HashMap<Vec<usize>, f64>,
    pub trainings: usize,
}

impl<'a> Retrainer<'a> {
    pub fn new(config: &'a DebugConfig, test: &'a Dataset, seed: u64) -> Self {
        Self {
            config,
            test,
            seed,
            cache: HashMap::new(),
            trainings: 0,
        }
    }

    pub fn accuracy(&mut self, data: &Dataset) -> Result<f64> {
        let labels = data.labels();
        if let Some(&acc) = self.cache.get(&labels) {
            return Ok(acc);
        }
        let mut net = self
            .config
            .architecture
            .build(data.shape(), data.class_count(), self.seed)?;
        train(&mut net, data, &self.config.train_config(self.seed, Vec::new()), NoSink)?;
        let acc = accuracy(&net, self.test)?;
        self.trainings += 1;
        self.cache.insert(labels, acc);
        Ok(acc)
    }
}

/// Walks `order` (positions in `noisy`), correcting flipped labels, and
/// retrains at every checkpoint fraction.
pub fn data_debugging(
    noisy: &Dataset,
    flips: &FlipRecord,
    ordering: OrderingKind,
    order: &[usize],
    retrainer: &mut Retrainer<'_>,
) -> Result<DebuggingCurve> {
    if order.len() != noisy.len() {
        return Err(Error::shape("debugging order", noisy.len(), order.len()));
    }
    let checkpoints = retrainer.config.checkpoints()?;
    let examples = noisy.examples();
    let mut curve = DebuggingCurve {
        ordering,
        seed: retrainer.seed,
        checkpoints: checkpoints.clone(),
        inspected_at: Vec::new(),
        found_at: Vec::new(),
        accuracy_at: Vec::new(),
        total_flips: flips.len(),
    };
    for &fraction in &checkpoints {
        let inspected = (fraction * noisy.len() as f64).round() as usize;
        let seen: Vec<usize> = order[..inspected].iter().map(|&p| examples[p].index).collect();
        let found = seen.iter().filter(|&&i| flips.is_flipped(i)).count();
        let corrected = flips.restore_only(noisy, seen)?;
        curve.inspected_at.push(inspected);
        curve.found_at.push(found);
        curve.accuracy_at.push(retrainer.accuracy(&corrected)?);
    }
    Ok(curve)
}

/// Both orderings for one seed, plus the inputs they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebuggingOutcome {
    pub seed: u64,
    pub responsibility: DebuggingCurve,
    pub random: DebuggingCurve,
    pub flips: FlipRecord,
    pub trainings: usize,
}

/// One seed of the debugging experiment: sample `n` examples from `pool`,
/// flip `flip_fraction` of their labels, train once on the noisy data with
/// the first layer tracked to fix the responsibility ordering, then build
/// both curves against `test`.
pub fn debugging_experiment(
    pool: &Dataset,
    test: &Dataset,
    n: usize,
    flip_fraction: f64,
    config: &DebugConfig,
    seed: u64,
) -> Result<DebuggingOutcome> {
    let sample = pool.sample(n, seed)?;
    let (noisy, flips) = flip_labels(&sample, flip_fraction, seed)?;
    let mut net = config
        .architecture
        .build(noisy.shape(), noisy.class_count(), seed)?;
    let first = net.first_param_layer();
    let (_, ledger) = train_with_ledger(&mut net, &noisy, &config.train_config(seed, vec![first]))?;
    let by_responsibility = responsibility_order(&ledger, first)?;
    let by_chance = random_order(noisy.len(), seed);
    let mut retrainer = Retrainer::new(config, test, seed);
    let responsibility = data_debugging(
        &noisy,
        &flips,
        OrderingKind::Responsibility,
        &by_responsibility,
        &mut retrainer,
    )?;
    let random = data_debugging(&noisy, &flips, OrderingKind::Random, &by_chance, &mut retrainer)?;
    Ok(DebuggingOutcome {
        seed,
        responsibility,
        random,
        flips,
        trainings: retrainer.trainings,
    })
}
