//! Named architectures used by the experiments and the CLI.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Activation, LayerSpec, Loss, Network, Shape};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Architecture {
    /// LeNet-5 on 28x28 input: conv1 is padded by 2 so the classic 32x32
    /// geometry (and 61,706 parameters for ten classes) is preserved.
    LeNet5,
    /// One 8@3x3 convolution, dense 128, dense head.
    DebugCnn,
    /// One 8@3x3 convolution with 2x2 pooling and a dense head.
    EvaluatorCnn,
    /// One hidden ReLU layer.
    Mlp { hidden: usize },
}

impl Architecture {
    pub fn layers(&self, classes: usize) -> Vec<LayerSpec> {
        use Activation::*;
        match *self {
            Architecture::LeNet5 => vec![
                LayerSpec::conv(6, 5, 2, Relu),
                LayerSpec::max_pool(2),
                LayerSpec::conv(16, 5, 0, Relu),
                LayerSpec::max_pool(2),
                LayerSpec::flatten(),
                LayerSpec::dense(120, Relu),
                LayerSpec::dense(84, Relu),
                LayerSpec::dense(classes, Softmax),
            ],
            Architecture::DebugCnn => vec![
                LayerSpec::conv(8, 3, 0, Relu),
                LayerSpec::flatten(),
                LayerSpec::dense(128, Relu),
                LayerSpec::dense(classes, Softmax),
            ],
            Architecture::EvaluatorCnn => vec![
                LayerSpec::conv(8, 3, 0, Relu),
                LayerSpec::max_pool(2),
                LayerSpec::flatten(),
                LayerSpec::dense(classes, Softmax),
            ],
            Architecture::Mlp { hidden } => vec![
                LayerSpec::flatten(),
                LayerSpec::dense(hidden, Relu),
                LayerSpec::dense(classes, Softmax),
            ],
        }
    }

    pub fn build(&self, input: Shape, classes: usize, seed: u64) -> Result<Network> {
        Network::new(input, &self.layers(classes), Loss::CrossEntropy, seed)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::LeNet5 => f.write_str("lenet5"),
            Architecture::DebugCnn => f.write_str("debug-cnn"),
            Architecture::EvaluatorCnn => f.write_str("evaluator-cnn"),
            Architecture::Mlp { hidden } => write!(f, "mlp:{hidden}"),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lenet5" => Ok(Architecture::LeNet5),
            "debug-cnn" => Ok(Architecture::DebugCnn),
            "evaluator-cnn" => Ok(Architecture::EvaluatorCnn),
            _ => {
                let hidden = s
                    .strip_prefix("mlp:")
                    .and_then(|h| h.parse::<usize>().ok())
                    .filter(|h| *h > 0);
                hidden.map(|hidden| Architecture::Mlp { hidden }).ok_or_else(|| {
                    Error::config(
                        "architecture",
                        format!("unknown architecture {s:?} (lenet5, debug-cnn, evaluator-cnn, mlp:<hidden>)"),
                    )
                })
            }
        }
    }
}

impl From<Architecture> for String {
    fn from(a: Architecture) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for Architecture {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}
