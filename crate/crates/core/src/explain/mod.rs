//! Example-based explanations: responsibility (probe + ledger) and the
//! nearest-neighbour MSE baseline restricted to the predicted class.

mod image;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::ledger::{top_k, ResponsibilityLedger};
use crate::nn::{Network, WeightId};
use crate::probe::{activations_from_trace, select_weights, ProbeScope};
use crate::{Error, Result};

pub use image::{write_grid_png, GridImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Responsibility,
    NearestNeighbor,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Responsibility => "responsibility",
            Method::NearestNeighbor => "nearest-neighbor",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "responsibility" => Ok(Method::Responsibility),
            "nearest-neighbor" | "nn" => Ok(Method::NearestNeighbor),
            _ => Err(Error::config(
                "method",
                format!("expected responsibility or nearest-neighbor, got {s:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplanationItem {
    /// Position within the actor's training split.
    pub position: usize,
    /// Stable dataset index of that example.
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub weights: Vec<WeightId>,
    pub scope: ProbeScope,
    pub model_digest: String,
}

/// Items are in rank order, best first: descending summed `R_mag` for
/// responsibility, ascending MSE for nearest neighbour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub query_id: String,
    pub predicted_class: usize,
    pub true_class: Option<usize>,
    pub method: Method,
    pub items: Vec<ExplanationItem>,
    pub provenance: Option<Provenance>,
}

impl Explanation {
    pub fn top(&self) -> &ExplanationItem {
        &self.items[0]
    }
}

/// One-shot form: checks the (network, ledger) pairing on every call.
pub fn explain_responsibility(
    network: &Network,
    ledger: &ResponsibilityLedger,
    input: &[f32],
    scope: ProbeScope,
    k: usize,
) -> Result<Explanation> {
    ResponsibilityExplainer::new(network, ledger)?.explain("query", input, None, scope, k)
}

/// A validated (network, ledger) pair.
pub struct ResponsibilityExplainer<'a> {
    network: &'a Network,
    ledger: &'a ResponsibilityLedger,
    digest: String,
}

impl<'a> ResponsibilityExplainer<'a> {
    pub fn new(network: &'a Network, ledger: &'a ResponsibilityLedger) -> Result<Self> {
        let digest = network.digest();
        ledger.check_digest(&digest)?;
        Ok(Self {
            network,
            ledger,
            digest,
        })
    }

    pub fn ledger(&self) -> &ResponsibilityLedger {
        self.ledger
    }

    /// Selects weights under `scope`, scores each training position by the sum
    /// of `R_mag` over the selected weights, and returns the top `k`.
    pub fn explain(
        &self,
        query_id: &str,
        input: &[f32],
        true_class: Option<usize>,
        scope: ProbeScope,
        k: usize,
    ) -> Result<Explanation> {
        let trace = self.network.forward(input)?;
        let activations = activations_from_trace(self.network, &trace, scope.kind)?;
        let weights = select_weights(&activations, scope.selection)?;
        if weights.is_empty() {
            return Err(Error::config(
                "selection",
                format!("{} selected no weights for query {query_id}", scope.selection),
            ));
        }
        let scores = self.ledger.summed_magnitude(&weights)?;
        let items = top_k(&scores, k)?
            .into_iter()
            .map(|(position, score)| ExplanationItem {
                position,
                index: self.ledger.index_map()[position],
                score,
            })
            .collect();
        Ok(Explanation {
            query_id: query_id.to_string(),
            predicted_class: trace.predicted(),
            true_class,
            method: Method::Responsibility,
            items,
            provenance: Some(Provenance {
                weights,
                scope,
                model_digest: self.digest.clone(),
            }),
        })
    }
}

/// Mean squared error over raw pixel values, summed sequentially in f64.
pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        s += d * d;
    }
    s / a.len() as f64
}

pub fn explain_nn(
    train: &Dataset,
    network: &Network,
    input: &[f32],
    k: usize,
) -> Result<Explanation> {
    NearestNeighborExplainer::new(train, network).explain("query", input, None, k)
}

/// Exhaustive scan over the training examples of the predicted class.
pub struct NearestNeighborExplainer<'a> {
    train: &'a Dataset,
    network: &'a Network,
    by_class: Vec<Vec<usize>>,
}

impl<'a> NearestNeighborExplainer<'a> {
    pub fn new(train: &'a Dataset, network: &'a Network) -> Self {
        let mut by_class = vec![Vec::new(); network.classes().max(train.class_count())];
        for (p, e) in train.examples().iter().enumerate() {
            by_class[e.label].push(p);
        }
        Self {
            train,
            network,
            by_class,
        }
    }

    pub fn explain(
        &self,
        query_id: &str,
        input: &[f32],
        true_class: Option<usize>,
        k: usize,
    ) -> Result<Explanation> {
        let predicted = self.network.predict_class(input)?;
        let candidates = &self.by_class[predicted];
        if candidates.is_empty() {
            return Err(Error::config(
                "train_split",
                format!("predicted class {predicted} has no training examples"),
            ));
        }
        if k == 0 || k > candidates.len() {
            return Err(Error::config(
                "k",
                format!("must be in 1..={}, got {k}", candidates.len()),
            ));
        }
        let examples = self.train.examples();
        let mut scored: Vec<(f64, usize)> = candidates
            .iter()
            .map(|&p| (mse(input, &examples[p].pixels), p))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let items = scored[..k]
            .iter()
            .map(|&(score, position)| ExplanationItem {
                position,
                index: examples[position].index,
                score,
            })
            .collect();
        Ok(Explanation {
            query_id: query_id.to_string(),
            predicted_class: predicted,
            true_class,
            method: Method::NearestNeighbor,
            items,
            provenance: None,
        })
    }
}

pub fn to_jsonl(explanations: &[Explanation]) -> String {
    let mut out = String::new();
    for e in explanations {
        out.push_str(&serde_json::to_string(e).expect("explanation serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<Explanation>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_jsonl(path: &Path, explanations: &[Explanation]) -> Result<()> {
    fs::write(path, to_jsonl(explanations))?;
    Ok(())
}

/// Query image followed by the images of its explanation items.
pub fn explanation_grid<'a>(
    query: &'a [f32],
    explanation: &Explanation,
    train: &'a Dataset,
) -> Result<Vec<&'a [f32]>> {
    let mut tiles = vec![query];
    for item in &explanation.items {
        let e = train.get(item.position).ok_or(Error::IndexOutOfRange {
            what: "training split",
            index: item.position,
            len: train.len(),
        })?;
        tiles.push(&e.pixels);
    }
    Ok(tiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_blobs;
    use crate::ledger::train_with_ledger;
    use crate::nn::arch::Architecture;
    use crate::nn::TrainConfig;
    use crate::probe::{ScopeKind, Selection};

    fn trained(data: &Dataset) -> (Network, ResponsibilityLedger) {
        let mut net = Architecture::Mlp { hidden: 6 }
            .build(data.shape(), data.class_count(), 1)
            .unwrap();
        let config = TrainConfig {
            learning_rate: 0.1,
            epochs: 3,
            tracked_layers: vec![1, 2],
            ..TrainConfig::default()
        };
        let (_, ledger) = train_with_ledger(&mut net, data, &config).unwrap();
        (net, ledger)
    }

    #[test]
    fn single_example_training_set() {
        let data = synthetic_blobs(1, 4, 2, 0);
        let (net, ledger) = trained(&data);
        for x in [[0.0, 1.0, 2.0, 3.0], [-1.0, 0.5, 0.0, 9.0]] {
            let e = explain_responsibility(&net, &ledger, &x, ProbeScope::default(), 1).unwrap();
            assert_eq!(e.items[0].position, 0);
        }
    }

    #[test]
    fn argmax_scope_is_select_then_most_responsible() {
        let data = synthetic_blobs(30, 4, 3, 2);
        let (net, ledger) = trained(&data);
        for ex in data.examples().iter().take(10) {
            for kind in [ScopeKind::PredictedClass, ScopeKind::Layer(1), ScopeKind::Network] {
                let scope = ProbeScope::new(kind, Selection::Argmax).unwrap();
                let e = explain_responsibility(&net, &ledger, &ex.pixels, scope, 3).unwrap();
                let acts = crate::probe::weight_activations(&net, &ex.pixels, kind).unwrap();
                let w = select_weights(&acts, Selection::Argmax).unwrap()[0];
                let manual = ledger.most_responsible(w, 3).unwrap();
                let got: Vec<(usize, f64)> = e.items.iter().map(|i| (i.position, i.score)).collect();
                assert_eq!(got, manual);
            }
        }
    }

    #[test]
    fn multi_weight_scores_are_summed() {
        let data = synthetic_blobs(20, 4, 2, 3);
        let (net, ledger) = trained(&data);
        let x = &data.examples()[0].pixels;
        let scope = ProbeScope::new(ScopeKind::PredictedClass, Selection::TopK(3)).unwrap();
        let e = explain_responsibility(&net, &ledger, x, scope, 20).unwrap();
        let weights = &e.provenance.as_ref().unwrap().weights;
        assert_eq!(weights.len(), 3);
        for item in &e.items {
            let s: f64 = weights
                .iter()
                .map(|&w| ledger.value(crate::ledger::Accumulator::Magnitude, w, item.position).unwrap())
                .sum();
            assert_eq!(s, item.score);
        }
        assert!(e.items.windows(2).all(|p| p[0].score >= p[1].score));
    }

    #[test]
    fn stale_ledger_and_empty_selection_are_rejected() {
        let data = synthetic_blobs(10, 4, 2, 3);
        let (net, ledger) = trained(&data);
        let other = Architecture::Mlp { hidden: 6 }.build(data.shape(), 2, 9).unwrap();
        let x = &data.examples()[0].pixels;
        assert!(matches!(
            explain_responsibility(&other, &ledger, x, ProbeScope::default(), 1).unwrap_err(),
            Error::StaleLedger { .. }
        ));
        let scope = ProbeScope::new(ScopeKind::Network, Selection::ZScore(1000.0)).unwrap();
        assert!(explain_responsibility(&net, &ledger, x, scope, 1).is_err());
    }

    #[test]
    fn nearest_neighbour_self_match_and_class_restriction() {
        let data = synthetic_blobs(40, 4, 2, 5);
        let (net, _) = trained(&data);
        for ex in data.examples() {
            let predicted = net.predict_class(&ex.pixels).unwrap();
            let e = explain_nn(&data, &net, &ex.pixels, 2).unwrap();
            assert_eq!(e.predicted_class, predicted);
            for item in &e.items {
                assert_eq!(data.examples()[item.position].label, predicted);
            }
            if ex.label == predicted {
                assert_eq!(e.items[0].index, ex.index);
                assert_eq!(e.items[0].score, 0.0);
            } else {
                assert_ne!(e.items[0].index, ex.index);
            }
        }
        let one_class = data.select_classes(&[0]).unwrap();
        let net1 = Architecture::Mlp { hidden: 3 }.build(data.shape(), 2, 0).unwrap();
        let x = &data.examples()[0].pixels;
        let predicted = net1.predict_class(x).unwrap();
        let d = Dataset::new("one", one_class.shape(), 2, one_class.examples().to_vec()).unwrap();
        let result = explain_nn(&d, &net1, x, 1);
        assert_eq!(result.is_err(), predicted == 1);
    }

    #[test]
    fn jsonl_round_trip() {
        let data = synthetic_blobs(12, 4, 2, 1);
        let (net, ledger) = trained(&data);
        let ex = &data.examples()[3];
        let mut a = explain_responsibility(&net, &ledger, &ex.pixels, ProbeScope::default(), 4).unwrap();
        a.true_class = Some(ex.label);
        let b = explain_nn(&data, &net, &ex.pixels, 2).unwrap();
        let text = to_jsonl(&[a.clone(), b.clone()]);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(from_jsonl(&text).unwrap(), vec![a, b]);
    }

    #[test]
    fn grid_has_query_first() {
        let data = synthetic_blobs(5, 4, 1, 0);
        let q = [0.5f32; 4];
        let e = Explanation {
            query_id: "q".into(),
            predicted_class: 0,
            true_class: None,
            method: Method::NearestNeighbor,
            items: vec![ExplanationItem { position: 2, index: 2, score: 0.0 }],
            provenance: None,
        };
        let tiles = explanation_grid(&q, &e, &data).unwrap();
        assert_eq!(tiles.len(), 2);
        assert_eq!(tiles[1], &data.examples()[2].pixels[..]);
    }
}
