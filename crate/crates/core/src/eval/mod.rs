//! Right/wrong evaluators: predict from an example (optionally paired with an
//! explanation image) whether a frozen actor classified it correctly.

mod metrics;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Example};
use crate::explain::{NearestNeighborExplainer, ResponsibilityExplainer};
use crate::ledger::ResponsibilityLedger;
use crate::nn::arch::Architecture;
use crate::nn::{train, NoSink, Network, Shape, TrainConfig};
use crate::probe::ProbeScope;
use crate::{Error, Result};

pub use metrics::{metrics_from_counts, ConfusionCounts, Metrics, Summary};

/// Evaluator label of an example the actor got wrong (the positive class).
pub const INCORRECT: usize = 1;
pub const CORRECT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Condition {
    Baseline,
    Responsibility,
    NearestNeighbor,
}

impl Condition {
    pub const ALL: [Condition; 3] = [
        Condition::Baseline,
        Condition::Responsibility,
        Condition::NearestNeighbor,
    ];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Baseline => "baseline",
            Condition::Responsibility => "responsibility",
            Condition::NearestNeighbor => "nearest-neighbor",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Condition::Baseline),
            "responsibility" => Ok(Condition::Responsibility),
            "nearest-neighbor" | "nn" => Ok(Condition::NearestNeighbor),
            _ => Err(Error::config(
                "conditions",
                format!("unknown condition {s:?} (baseline, responsibility, nearest-neighbor)"),
            )),
        }
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> Self {
        c.to_string()
    }
}

impl TryFrom<String> for Condition {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// All incorrectly classified examples of `split` plus an equal-size seeded
/// uniform sample of the correct ones, in source order, labelled
/// [`INCORRECT`] / [`CORRECT`]. Pixels and stable indices are unchanged.
pub fn build_evaluator_dataset(actor: &Network, split: &Dataset, seed: u64) -> Result<Dataset> {
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut wrong = Vec::new();
    let mut right = Vec::new();
    for (p, e) in split.examples().iter().enumerate() {
        if actor.predict_class(&e.pixels)? == e.label {
            right.push(p);
        } else {
            wrong.push(p);
        }
    }
    if wrong.is_empty() {
        return Err(Error::Evaluation(format!(
            "actor makes no mistakes on {}",
            split.name()
        )));
    }
    if right.len() < wrong.len() {
        return Err(Error::Evaluation(format!(
            "only {} correct predictions for {} incorrect ones",
            right.len(),
            wrong.len()
        )));
    }
    right.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    right.truncate(wrong.len());
    let mut chosen: Vec<(usize, usize)> = wrong
        .iter()
        .map(|&p| (p, INCORRECT))
        .chain(right.iter().map(|&p| (p, CORRECT)))
        .collect();
    chosen.sort_unstable();
    let examples = chosen
        .into_iter()
        .map(|(p, label)| Example {
            label,
            ..split.examples()[p].clone()
        })
        .collect();
    Dataset::new(
        format!("{}/balanced", split.name()),
        split.shape(),
        2,
        examples,
    )
}

/// Produces the top-1 explanation image for a query.
pub enum Augmenter<'a> {
    Baseline,
    Responsibility {
        explainer: ResponsibilityExplainer<'a>,
        scope: ProbeScope,
        train: &'a Dataset,
    },
    NearestNeighbor {
        explainer: NearestNeighborExplainer<'a>,
        train: &'a Dataset,
    },
}

impl Augmenter<'_> {
    fn explanation_image(&self, e: &Example) -> Result<Option<&[f32]>> {
        let id = e.index.to_string();
        let (pos, train) = match self {
            Augmenter::Baseline => return Ok(None),
            Augmenter::Responsibility {
                explainer,
                scope,
                train,
            } => (explainer.explain(&id, &e.pixels, None, *scope, 1)?.top().position, *train),
            Augmenter::NearestNeighbor { explainer, train } => {
                (explainer.explain(&id, &e.pixels, None, 1)?.top().position, *train)
            }
        };
        Ok(Some(&train.examples()[pos].pixels))
    }
}

/// Concatenates `b` to the right of `a`, row by row in every channel.
pub fn concat_width(a: &[f32], b: &[f32], shape: Shape) -> Vec<f32> {
    let mut out = Vec::with_capacity(2 * shape.len());
    for c in 0..shape.channels {
        for y in 0..shape.height {
            let row = (c * shape.height + y) * shape.width;
            out.extend_from_slice(&a[row..row + shape.width]);
            out.extend_from_slice(&b[row..row + shape.width]);
        }
    }
    out
}

/// Pairs every example with its top-1 explanation along the width. The
/// baseline passes examples through unchanged. Any failure aborts with the
/// stable indices of every failing example.
pub fn augment(dataset: &Dataset, augmenter: &Augmenter<'_>) -> Result<Dataset> {
    if matches!(augmenter, Augmenter::Baseline) {
        return Ok(dataset.clone());
    }
    let shape = dataset.shape();
    let mut failures = Vec::new();
    let mut examples = Vec::with_capacity(dataset.len());
    for e in dataset.examples() {
        match augmenter.explanation_image(e) {
            Ok(Some(img)) => examples.push(Example {
                pixels: concat_width(&e.pixels, img, shape),
                ..e.clone()
            }),
            Ok(None) => unreachable!("baseline handled above"),
            Err(err) => failures.push(format!("{}: {err}", e.index)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::ExplanationFailed(failures));
    }
    Dataset::new(
        dataset.name(),
        Shape::new(shape.channels, shape.height, 2 * shape.width),
        dataset.class_count(),
        examples,
    )
}

/// Fixed evaluator recipe shared by every condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    pub architecture: Architecture,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::EvaluatorCnn,
            learning_rate: 0.01,
            batch_size: 8,
            epochs: 5,
        }
    }
}

/// Frozen artifacts of one actor training run.
pub struct EvalSetup<'a> {
    pub actor: &'a Network,
    pub actor_train: &'a Dataset,
    pub ledger: &'a ResponsibilityLedger,
    pub validation: &'a Dataset,
    pub test: &'a Dataset,
    pub scope: ProbeScope,
    /// Seed for sampling the correct examples of the balanced sets.
    pub balance_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum ConditionStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: Condition,
    pub status: ConditionStatus,
    pub per_seed: Vec<SeedResult>,
    pub accuracy: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
    pub actor_accuracy: f64,
    pub train_examples: usize,
    pub test_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub reports: Vec<EvalReport>,
    pub evaluator: EvaluatorConfig,
    pub seeds: Vec<u64>,
    pub actor_digest: String,
    /// Both the evaluator training and test portions are balanced.
    pub balanced_test: bool,
}

impl EvalRun {
    pub fn report(&self, condition: Condition) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.condition == condition)
    }

    /// One row per condition: mean and std of every metric.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "condition,status,accuracy_mean,accuracy_std,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std,seeds\n",
        );
        for r in &self.reports {
            let status = match &r.status {
                ConditionStatus::Ok => "ok",
                ConditionStatus::Failed(_) => "failed",
            };
            out.push_str(&format!("{},{status}", r.condition));
            for s in [&r.accuracy, &r.precision, &r.recall, &r.f1] {
                out.push_str(&format!(",{},{}", opt(s.mean), opt(s.std)));
            }
            out.push_str(&format!(",{}\n", r.per_seed.len()));
        }
        out
    }

    pub fn per_seed_csv(&self) -> String {
        let mut out = String::from("condition,seed,tp,fp,fn,tn,accuracy,precision,recall,f1\n");
        for r in &self.reports {
            for s in &r.per_seed {
                let c = &s.counts;
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    r.condition,
                    s.seed,
                    c.tp,
                    c.fp,
                    c.fn_,
                    c.tn,
                    s.metrics.accuracy,
                    opt(s.metrics.precision),
                    opt(s.metrics.recall),
                    opt(s.metrics.f1)
                ));
            }
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

pub fn accuracy(network: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for e in data.examples() {
        if network.predict_class(&e.pixels)? == e.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

fn confusion(evaluator: &Network, data: &Dataset) -> Result<ConfusionCounts> {
    let mut c = ConfusionCounts::default();
    for e in data.examples() {
        let predicted = evaluator.predict_class(&e.pixels)?;
        match (predicted == INCORRECT, e.label == INCORRECT) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Trains and scores one evaluator per (condition, seed). Every condition uses
/// the same balanced examples and evaluator seeds; only the augmentation
/// differs. A diverging condition is reported as failed and the others proceed.
pub fn run_evaluation(
    setup: &EvalSetup<'_>,
    conditions: &[Condition],
    seeds: &[u64],
    evaluator: &EvaluatorConfig,
) -> Result<EvalRun> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one evaluator seed"));
    }
    if conditions.is_empty() {
        return Err(Error::config("conditions", "need at least one condition"));
    }
    let digest = setup.actor.digest();
    let actor_accuracy = accuracy(setup.actor, setup.test)?;
    let train_set = build_evaluator_dataset(setup.actor, setup.validation, setup.balance_seed)?;
    let test_set = build_evaluator_dataset(setup.actor, setup.test, setup.balance_seed)?;

    let mut reports = Vec::new();
    for &condition in conditions {
        let augmenter = match condition {
            Condition::Baseline => Augmenter::Baseline,
            Condition::Responsibility => Augmenter::Responsibility {
                explainer: ResponsibilityExplainer::new(setup.actor, setup.ledger)?,
                scope: setup.scope,
                train: setup.actor_train,
            },
            Condition::NearestNeighbor => Augmenter::NearestNeighbor {
                explainer: NearestNeighborExplainer::new(setup.actor_train, setup.actor),
                train: setup.actor_train,
            },
        };
        let train_aug = augment(&train_set, &augmenter)?;
        let test_aug = augment(&test_set, &augmenter)?;
        let mut per_seed = Vec::new();
        let mut status = ConditionStatus::Ok;
        for &seed in seeds {
            match train_evaluator(&train_aug, &test_aug, evaluator, seed) {
                Ok(r) => per_seed.push(r),
                Err(e @ Error::NonFinite { .. }) => {
                    status = ConditionStatus::Failed(format!("seed {seed}: {e}"));
                    per_seed.clear();
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let pick = |f: fn(&Metrics) -> Option<f64>| {
            Summary::of(per_seed.iter().map(|s| f(&s.metrics)))
        };
        reports.push(EvalReport {
            condition,
            status,
            accuracy: pick(|m| Some(m.accuracy)),
            precision: pick(|m| m.precision),
            recall: pick(|m| m.recall),
            f1: pick(|m| m.f1),
            per_seed,
            actor_accuracy,
            train_examples: train_set.len(),
            test_examples: test_set.len(),
        });
    }
    if setup.actor.digest() != digest {
        return Err(Error::Evaluation("actor weights changed during evaluation".into()));
    }
    Ok(EvalRun {
        reports,
        evaluator: evaluator.clone(),
        seeds: seeds.to_vec(),
        actor_digest: digest,
        balanced_test: true,
    })
}

fn train_evaluator(
    train_set: &Dataset,
    test_set: &Dataset,
    config: &EvaluatorConfig,
    seed: u64,
) -> Result<SeedResult> {
    let mut net = config.architecture.build(train_set.shape(), 2, seed)?;
    let tc = TrainConfig {
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        epochs: config.epochs,
        tracked_layers: Vec::new(),
        rng_seed: seed,
    };
    train(&mut net, train_set, &tc, NoSink)?;
    let counts = confusion(&net, test_set)?;
    Ok(SeedResult {
        seed,
        metrics: metrics_from_counts(counts)?,
        counts,
    })
}
