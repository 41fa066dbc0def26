//! Flat run configuration shared by every subcommand. The TOML file and the
//! command-line flags carry the same keys; flags win.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use responsibility::eval::Condition;
use responsibility::explain::Method;
use responsibility::nn::arch::Architecture;
use responsibility::probe::{ProbeScope, ScopeKind, Selection};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const OUTPUT_ENV: &str = "RESP_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Train,
    Explain,
    Eval,
    DebugData,
    Interclass,
    Stats,
    Seeds,
    Misclass,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Train => "train",
            Subcommand::Explain => "explain",
            Subcommand::Eval => "eval",
            Subcommand::DebugData => "debug-data",
            Subcommand::Interclass => "interclass",
            Subcommand::Stats => "stats",
            Subcommand::Seeds => "seeds",
            Subcommand::Misclass => "misclass",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Config schema version (must be 1).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,

    /// Dataset manifest (TOML).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// lenet5, debug-cnn, evaluator-cnn or mlp:<hidden>.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Architecture>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Layer indices recorded in the ledger (default: the final layer).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracked_layers: Option<Vec<usize>>,
    /// Seeds initialization, shuffling, sampling and splitting.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Number of training examples sampled from the training file (0 = all).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<usize>,
    /// Keep only these classes, relabelled in the given order.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<usize>>,

    /// Saved model checkpoint.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Saved ledger produced together with `model`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ledger: Option<PathBuf>,
    /// Stable index of the query in the test file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_index: Option<usize>,
    /// responsibility or nearest-neighbor.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    /// class, layer:<index> or network.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_scope: Option<ScopeKind>,
    /// argmax, topk:<k> or zscore:<threshold>.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_selection: Option<Selection>,

    /// Actor train / validation / test fractions.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_fractions: Option<Vec<f64>>,
    /// Examples drawn from the training file before splitting (0 = all).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_pool: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditions: Option<Vec<Condition>>,
    /// Evaluator seeds (eval), experiment seeds (debug-data) or training seeds (seeds).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluator_learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluator_batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluator_epochs: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub debug_examples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flip_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_step: Option<f64>,

    /// Length of every ranked list in the seed comparison.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub list_len: Option<usize>,

    /// Test examples drawn per class for the misclassification report.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misclass_per_class: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_group_size: Option<usize>,

    /// Output directory; defaults to `$RESP_OUTPUT_DIR/<subcommand>-<config digest>`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {reason}"))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        match config.schema_version {
            Some(SCHEMA_VERSION) => Ok(config),
            Some(v) => Err(invalid("schema_version", format!("unsupported version {v}"))),
            None => Err(invalid("schema_version", "missing from config file")),
        }
    }

    /// Keys set in `flags` replace those of `self`.
    pub fn overlay(self, flags: &RunConfig) -> Result<Self, CliError> {
        let mut base = serde_json::to_value(&self).map_err(|e| CliError::Config(e.to_string()))?;
        let top = serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))?;
        if let (Some(base), Some(top)) = (base.as_object_mut(), top.as_object()) {
            for (k, v) in top {
                base.insert(k.clone(), v.clone());
            }
        }
        serde_json::from_value(base).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Fills every unset key the subcommand uses with its default.
    pub fn with_defaults(mut self, cmd: Subcommand) -> Self {
        use Subcommand::*;
        fn set<T>(slot: &mut Option<T>, value: T) {
            if slot.is_none() {
                *slot = Some(value);
            }
        }
        set(&mut self.schema_version, SCHEMA_VERSION);
        set(&mut self.seed, 0);
        if cmd != Explain {
            let arch = if cmd == DebugData {
                Architecture::DebugCnn
            } else {
                Architecture::LeNet5
            };
            set(&mut self.architecture, arch);
            set(&mut self.learning_rate, 0.01);
            set(&mut self.batch_size, 1);
            let epochs = match cmd {
                Train | Interclass | Stats => 2,
                DebugData => 3,
                _ => 1,
            };
            set(&mut self.epochs, epochs);
        }
        match cmd {
            Train | Interclass | Stats => set(&mut self.train_subset, 10_000),
            Seeds => set(&mut self.train_subset, 5_000),
            _ => {}
        }
        if matches!(cmd, Explain | Eval | Misclass) {
            set(&mut self.probe_scope, ScopeKind::PredictedClass);
            set(&mut self.probe_selection, Selection::Argmax);
        }
        if cmd == Explain {
            set(&mut self.method, Method::Responsibility);
            set(&mut self.top_k, 3);
        }
        if matches!(cmd, Eval | Misclass) {
            set(&mut self.split_fractions, vec![0.5, 1.0 / 3.0, 1.0 / 6.0]);
            set(&mut self.eval_pool, 12_000);
        }
        match cmd {
            Eval => {
                set(&mut self.conditions, Condition::ALL.to_vec());
                set(&mut self.seeds, vec![0, 1, 2, 3, 4]);
                set(&mut self.evaluator_learning_rate, 0.01);
                set(&mut self.evaluator_batch_size, 8);
                set(&mut self.evaluator_epochs, 5);
            }
            DebugData => {
                set(&mut self.classes, vec![0, 6]);
                set(&mut self.seeds, vec![0, 1, 2, 3, 4]);
                set(&mut self.debug_examples, 1000);
                set(&mut self.flip_fraction, 0.1);
                set(&mut self.checkpoint_step, 0.05);
            }
            Seeds => {
                set(&mut self.seeds, vec![1, 2, 3]);
                set(&mut self.list_len, 10);
            }
            Misclass => {
                set(&mut self.misclass_per_class, 60);
                set(&mut self.min_group_size, 3);
            }
            _ => {}
        }
        self
    }

    /// Checks the keys `cmd` relies on. Call after [`with_defaults`](Self::with_defaults).
    pub fn validate(&self, cmd: Subcommand) -> Result<(), CliError> {
        use Subcommand::*;
        if self.schema_version != Some(SCHEMA_VERSION) {
            return Err(invalid("schema_version", format!("expected {SCHEMA_VERSION}")));
        }
        let dataset = self.dataset.as_ref().ok_or_else(|| invalid("dataset", "required"))?;
        existing("dataset", dataset)?;
        for (name, path) in [("model", &self.model), ("ledger", &self.ledger)] {
            if let Some(p) = path {
                existing(name, p)?;
            }
        }
        if self.model.is_some() != self.ledger.is_some() {
            return Err(invalid(
                if self.model.is_some() { "ledger" } else { "model" },
                "model and ledger must be given together",
            ));
        }
        if cmd == Explain {
            if self.model.is_none() {
                return Err(invalid("model", "required by explain"));
            }
            if self.query_index.is_none() {
                return Err(invalid("query_index", "required by explain"));
            }
        }
        if let Some(lr) = self.learning_rate {
            if !lr.is_finite() || lr < 0.0 {
                return Err(invalid("learning_rate", format!("must be finite and >= 0, got {lr}")));
            }
        }
        if let Some(lr) = self.evaluator_learning_rate {
            if !lr.is_finite() || lr < 0.0 {
                return Err(invalid(
                    "evaluator_learning_rate",
                    format!("must be finite and >= 0, got {lr}"),
                ));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("top_k", self.top_k),
            ("evaluator_batch_size", self.evaluator_batch_size),
            ("evaluator_epochs", self.evaluator_epochs),
            ("debug_examples", self.debug_examples),
            ("list_len", self.list_len),
            ("misclass_per_class", self.misclass_per_class),
            ("min_group_size", self.min_group_size),
        ] {
            if v == Some(0) {
                return Err(invalid(name, "must be >= 1"));
            }
        }
        if let Some(f) = &self.split_fractions {
            if f.len() != 3 {
                return Err(invalid("split_fractions", "expected three values"));
            }
        }
        if let Some(f) = self.flip_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(invalid("flip_fraction", format!("must lie in (0, 1), got {f}")));
            }
        }
        if let Some(s) = self.checkpoint_step {
            if !(s > 0.0 && s <= 1.0) {
                return Err(invalid("checkpoint_step", format!("must lie in (0, 1], got {s}")));
            }
        }
        if matches!(cmd, Eval | DebugData | Seeds) {
            match &self.seeds {
                Some(s) if !s.is_empty() => {}
                _ => return Err(invalid("seeds", "must not be empty")),
            }
        }
        if matches!(cmd, Eval) && self.conditions.as_ref().is_some_and(|c| c.is_empty()) {
            return Err(invalid("conditions", "must not be empty"));
        }
        if let (Some(kind), Some(sel)) = (self.probe_scope, self.probe_selection) {
            ProbeScope::new(kind, sel).map_err(|e| invalid("probe_selection", e))?;
        }
        Ok(())
    }

    pub fn scope(&self) -> ProbeScope {
        ProbeScope::new(
            self.probe_scope.unwrap_or(ScopeKind::PredictedClass),
            self.probe_selection.unwrap_or(Selection::Argmax),
        )
        .expect("validated")
    }

    /// The configuration echoed into manifests: everything except the output location.
    pub fn echo(&self) -> RunConfig {
        RunConfig {
            output_dir: None,
            ..self.clone()
        }
    }

    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self.echo()).expect("config serializes");
        hex::encode(Sha256::digest(serde_json::to_vec(&value).expect("value serializes")))
    }

    pub fn output_root(&self, cmd: Subcommand) -> PathBuf {
        if let Some(dir) = &self.output_dir {
            return dir.clone();
        }
        let base = std::env::var_os(OUTPUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"));
        base.join(format!("{}-{}", cmd.name(), &self.digest()[..12]))
    }
}

fn existing(field: &str, path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(invalid(field, format!("{} does not exist", path.display())))
    }
}
