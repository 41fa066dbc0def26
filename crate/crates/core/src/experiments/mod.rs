//! Desk-scale studies built on the ledger: distribution of signed values,
//! inter-class aggregation, label-noise debugging, misclassification groups
//! and cross-seed comparison.

mod debugging;
mod misclass;
mod output;
mod seeds;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ledger::{ResponsibilityLedger, SignedStats};
use crate::nn::Network;
use crate::Result;

pub use debugging::{
    data_debugging, debugging_experiment, random_order, responsibility_order, DebugConfig,
    DebuggingCurve, DebuggingOutcome, OrderingKind, Retrainer,
};
pub use misclass::{group_entries, misclassified_report, MisclassEntry, MisclassGroup, MisclassReport};
pub use output::{FileEntry, OutputDir, OutputManifest, MANIFEST_FILE};
pub use seeds::{
    jaccard, neuron_lists, seed_lists, seeds_experiment, JaccardSummary, ListKind, NeuronLists,
    SeedComparison, SeedLists,
};

/// Signed final-layer values with their summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub stats: SignedStats,
    #[serde(skip)]
    pub values: Vec<f64>,
}

impl DistributionReport {
    /// Raw values, one `(weight, position, value)` row each, weight-major.
    pub fn values_csv(&self, ledger: &ResponsibilityLedger) -> Result<String> {
        let weights = ledger.layer_weights(self.stats.layer)?;
        let n = ledger.n();
        let mut out = String::with_capacity(self.values.len() * 24);
        out.push_str("weight,position,value\n");
        for (flat, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{},{v:e}", weights[flat / n], flat % n).unwrap();
        }
        Ok(out)
    }
}

pub fn distribution_report(ledger: &ResponsibilityLedger, network: &Network) -> Result<DistributionReport> {
    let layer = network.last_layer();
    Ok(DistributionReport {
        stats: ledger.signed_stats(layer)?,
        values: ledger.signed_values(layer)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_blobs;
    use crate::ledger::{mean_std, train_with_ledger};
    use crate::nn::arch::Architecture;
    use crate::nn::TrainConfig;

    #[test]
    fn zero_learning_rate_exports_zero() {
        let data = synthetic_blobs(30, 3, 3, 1);
        let mut net = Architecture::Mlp { hidden: 4 }.build(data.shape(), 3, 0).unwrap();
        let config = TrainConfig {
            learning_rate: 0.0,
            tracked_layers: vec![2],
            ..TrainConfig::default()
        };
        let (_, ledger) = train_with_ledger(&mut net, &data, &config).unwrap();
        let r = distribution_report(&ledger, &net).unwrap();
        assert!(r.values.iter().all(|&v| v == 0.0));
        assert_eq!((r.stats.mean, r.stats.std), (0.0, 0.0));
        assert_eq!(r.stats.max.len() + r.stats.min.len(), 40);
    }

    #[test]
    fn report_matches_recomputed_moments() {
        let data = synthetic_blobs(30, 3, 3, 1);
        let mut net = Architecture::Mlp { hidden: 4 }.build(data.shape(), 3, 0).unwrap();
        let config = TrainConfig {
            learning_rate: 0.1,
            epochs: 2,
            tracked_layers: vec![2],
            ..TrainConfig::default()
        };
        let (_, ledger) = train_with_ledger(&mut net, &data, &config).unwrap();
        let r = distribution_report(&ledger, &net).unwrap();
        assert_eq!(r.stats, ledger.signed_stats(2).unwrap());
        assert_eq!(r.values.len(), 15 * 30);
        let (mean, std) = mean_std(&r.values);
        assert_eq!((mean, std), (r.stats.mean, r.stats.std));
        let csv = r.values_csv(&ledger).unwrap();
        assert_eq!(csv.lines().count(), 1 + 15 * 30);
    }
}
