//! Per-neuron rankings of training examples under different training seeds.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::ledger::{top_k, train_with_ledger, Aggregate, ResponsibilityLedger};
use crate::nn::arch::Architecture;
use crate::nn::{NeuronId, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ListKind {
    FreqPos,
    MaxPos,
    FreqNeg,
    MaxNeg,
}

impl ListKind {
    pub const ALL: [ListKind; 4] = [
        ListKind::FreqPos,
        ListKind::MaxPos,
        ListKind::FreqNeg,
        ListKind::MaxNeg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ListKind::FreqPos => "freq-pos",
            ListKind::MaxPos => "max-pos",
            ListKind::FreqNeg => "freq-neg",
            ListKind::MaxNeg => "max-neg",
        }
    }
}

/// The four rankings for one output neuron, as stable dataset indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronLists {
    pub neuron: usize,
    pub freq_pos: Vec<usize>,
    pub max_pos: Vec<usize>,
    pub freq_neg: Vec<usize>,
    pub max_neg: Vec<usize>,
}

impl NeuronLists {
    pub fn get(&self, kind: ListKind) -> &[usize] {
        match kind {
            ListKind::FreqPos => &self.freq_pos,
            ListKind::MaxPos => &self.max_pos,
            ListKind::FreqNeg => &self.freq_neg,
            ListKind::MaxNeg => &self.max_neg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLists {
    pub seed: u64,
    pub neurons: Vec<NeuronLists>,
}

impl SeedLists {
    /// Share of neurons whose max-pos top-1 example carries the neuron's class.
    pub fn label_alignment(&self, dataset: &Dataset) -> Result<f64> {
        let mut aligned = 0;
        for n in &self.neurons {
            let top = n.max_pos[0];
            let p = dataset.position_of(top).ok_or(Error::IndexOutOfRange {
                what: "dataset indices",
                index: top,
                len: dataset.len(),
            })?;
            if dataset.examples()[p].label == n.neuron {
                aligned += 1;
            }
        }
        Ok(aligned as f64 / self.neurons.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardSummary {
    pub kind: ListKind,
    /// Mean over seed pairs and neurons.
    pub mean: f64,
    /// Per seed pair `(a, b)`: mean over neurons.
    pub pairs: Vec<(u64, u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub list_len: usize,
    pub seeds: Vec<SeedLists>,
    pub jaccard: Vec<JaccardSummary>,
    pub label_alignment: Vec<(u64, f64)>,
}

impl SeedComparison {
    pub fn jaccard(&self, kind: ListKind) -> Option<&JaccardSummary> {
        self.jaccard.iter().find(|j| j.kind == kind)
    }

    pub fn lists_csv(&self) -> String {
        let mut out = String::from("seed,neuron,list,rank,index\n");
        for s in &self.seeds {
            for n in &s.neurons {
                for kind in ListKind::ALL {
                    for (rank, idx) in n.get(kind).iter().enumerate() {
                        out.push_str(&format!(
                            "{},{},{},{rank},{idx}\n",
                            s.seed,
                            n.neuron,
                            kind.name()
                        ));
                    }
                }
            }
        }
        out
    }

    pub fn jaccard_csv(&self) -> String {
        let mut out = String::from("list,seed_a,seed_b,jaccard\n");
        for j in &self.jaccard {
            for (a, b, v) in &j.pairs {
                out.push_str(&format!("{},{a},{b},{v:.6}\n", j.kind.name()));
            }
            out.push_str(&format!("{},mean,mean,{:.6}\n", j.kind.name(), j.mean));
        }
        out
    }
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// The four lists for every final-layer neuron of a sealed ledger. Max lists
/// rank by the neuron's signed net responsibility (largest positive first,
/// most negative first); frequency lists use the credit counters.
pub fn neuron_lists(ledger: &ResponsibilityLedger, list_len: usize) -> Result<Vec<NeuronLists>> {
    let map = ledger.index_map();
    let stable = |ps: Vec<usize>| ps.into_iter().map(|p| map[p]).collect::<Vec<_>>();
    let neurons: Vec<NeuronId> = ledger.freq_neurons().to_vec();
    if neurons.is_empty() {
        return Err(Error::config(
            "tracked_layers",
            "seed comparison needs the final layer tracked",
        ));
    }
    neurons
        .into_iter()
        .map(|neuron| {
            let signed = ledger.neuron_responsibility(neuron, Aggregate::Signed)?;
            let negated: Vec<f64> = signed.iter().map(|v| -v).collect();
            let positions = |scores: &[f64]| -> Result<Vec<usize>> {
                Ok(top_k(scores, list_len)?.into_iter().map(|(p, _)| p).collect())
            };
            Ok(NeuronLists {
                neuron: neuron.unit,
                freq_pos: stable(ledger.most_frequent(neuron, true, list_len)?),
                max_pos: stable(positions(&signed)?),
                freq_neg: stable(ledger.most_frequent(neuron, false, list_len)?),
                max_neg: stable(positions(&negated)?),
            })
        })
        .collect()
}

/// Trains one model with `seed` (initialization and shuffling) and ranks.
pub fn seed_lists(
    dataset: &Dataset,
    architecture: Architecture,
    config: &TrainConfig,
    seed: u64,
    list_len: usize,
) -> Result<SeedLists> {
    let mut net = architecture.build(dataset.shape(), dataset.class_count(), seed)?;
    let config = TrainConfig {
        rng_seed: seed,
        tracked_layers: vec![net.last_layer()],
        ..config.clone()
    };
    let (_, ledger) = train_with_ledger(&mut net, dataset, &config)?;
    Ok(SeedLists {
        seed,
        neurons: neuron_lists(&ledger, list_len)?,
    })
}

pub fn seeds_experiment(
    dataset: &Dataset,
    architecture: Architecture,
    config: &TrainConfig,
    seeds: &[u64],
    list_len: usize,
) -> Result<SeedComparison> {
    if seeds.len() < 2 {
        return Err(Error::config("seeds", "need at least two seeds"));
    }
    let distinct: BTreeSet<_> = seeds.iter().collect();
    if distinct.len() != seeds.len() {
        return Err(Error::config("seeds", format!("duplicate seeds in {seeds:?}")));
    }
    let runs = seeds
        .iter()
        .map(|&s| seed_lists(dataset, architecture, config, s, list_len))
        .collect::<Result<Vec<_>>>()?;
    let jaccard = ListKind::ALL
        .iter()
        .map(|&kind| {
            let mut pairs = Vec::new();
            for a in 0..runs.len() {
                for b in a + 1..runs.len() {
                    let per_neuron: Vec<f64> = runs[a]
                        .neurons
                        .iter()
                        .zip(&runs[b].neurons)
                        .map(|(x, y)| jaccard(x.get(kind), y.get(kind)))
                        .collect();
                    let mean = per_neuron.iter().sum::<f64>() / per_neuron.len() as f64;
                    pairs.push((runs[a].seed, runs[b].seed, mean));
                }
            }
            let mean = pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64;
            JaccardSummary { kind, mean, pairs }
        })
        .collect();
    let label_alignment = runs
        .iter()
        .map(|r| Ok((r.seed, r.label_alignment(dataset)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedComparison {
        list_len,
        seeds: runs,
        jaccard,
        label_alignment,
    })
}
