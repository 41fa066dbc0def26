//! Inference-time weight activations and weight selection.
//!
//! A weight's activation is its contribution `x_i * w_i` to the pre-activation
//! of the neuron it feeds, with `x = 1` for biases. Ranking uses `|x_i * w_i|`.
//! For a convolution filter the contribution of a kernel weight is summed over
//! all output positions, and a bias contributes `b` once per position.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::{LayerKind, Network, Trace, WeightId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ScopeKind {
    /// Weights feeding the output neuron of the predicted class.
    PredictedClass,
    Layer(usize),
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Selection {
    Argmax,
    TopK(usize),
    /// Every weight whose magnitude z-score exceeds the threshold.
    ZScore(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeScope {
    pub kind: ScopeKind,
    pub selection: Selection,
}

impl Default for ProbeScope {
    fn default() -> Self {
        Self {
            kind: ScopeKind::PredictedClass,
            selection: Selection::Argmax,
        }
    }
}

impl ProbeScope {
    pub fn new(kind: ScopeKind, selection: Selection) -> Result<Self> {
        selection.validate()?;
        Ok(Self { kind, selection })
    }
}

impl Selection {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Selection::TopK(0) => Err(Error::config("selection", "top-k needs k >= 1")),
            Selection::ZScore(t) if !(t.is_finite() && t > 0.0) => Err(Error::config(
                "selection",
                format!("z-score threshold must be > 0, got {t}"),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ScopeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScopeKind::PredictedClass => f.write_str("class"),
            ScopeKind::Layer(l) => write!(f, "layer:{l}"),
            ScopeKind::Network => f.write_str("network"),
        }
    }
}

impl FromStr for ScopeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("scope", format!("expected class, layer:N or network, got {s:?}"));
        match s {
            "class" => Ok(ScopeKind::PredictedClass),
            "network" => Ok(ScopeKind::Network),
            _ => {
                let l = s.strip_prefix("layer:").ok_or_else(bad)?;
                l.parse().map(ScopeKind::Layer).map_err(|_| bad())
            }
        }
    }
}

impl From<ScopeKind> for String {
    fn from(s: ScopeKind) -> Self {
        s.to_string()
    }
}

impl TryFrom<String> for ScopeKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selection::Argmax => f.write_str("argmax"),
            Selection::TopK(k) => write!(f, "topk:{k}"),
            Selection::ZScore(t) => write!(f, "zscore:{t}"),
        }
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::config(
                "selection",
                format!("expected argmax, topk:K or zscore:T, got {s:?}"),
            )
        };
        let sel = if s == "argmax" {
            Selection::Argmax
        } else if let Some(k) = s.strip_prefix("topk:") {
            Selection::TopK(k.parse().map_err(|_| bad())?)
        } else if let Some(t) = s.strip_prefix("zscore:") {
            Selection::ZScore(t.parse().map_err(|_| bad())?)
        } else {
            return Err(bad());
        };
        sel.validate()?;
        Ok(sel)
    }
}

impl From<Selection> for String {
    fn from(s: Selection) -> Self {
        s.to_string()
    }
}

impl TryFrom<String> for Selection {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightActivation {
    pub weight: WeightId,
    pub contribution: f64,
    pub magnitude: f64,
}

impl WeightActivation {
    fn new(weight: WeightId, contribution: f64) -> Self {
        Self {
            weight,
            contribution,
            magnitude: contribution.abs(),
        }
    }
}

/// Activations of every in-scope weight, in [`WeightId`] order.
pub fn weight_activations(
    network: &Network,
    input: &[f32],
    scope: ScopeKind,
) -> Result<Vec<WeightActivation>> {
    let trace = network.forward(input)?;
    activations_from_trace(network, &trace, scope)
}

/// Same as [`weight_activations`] for an existing forward pass.
pub fn activations_from_trace(
    network: &Network,
    trace: &Trace,
    scope: ScopeKind,
) -> Result<Vec<WeightActivation>> {
    let mut out = Vec::new();
    match scope {
        ScopeKind::PredictedClass => {
            let last = network.last_layer();
            layer_activations(network, trace, last, Some(trace.predicted()), &mut out);
        }
        ScopeKind::Layer(l) => {
            let layer = network.layers().get(l).ok_or_else(|| {
                Error::config(
                    "scope",
                    format!("layer {l} does not exist ({} layers)", network.layers().len()),
                )
            })?;
            if !layer.has_params() {
                return Err(Error::config(
                    "scope",
                    format!("layer {l} has no weights"),
                ));
            }
            layer_activations(network, trace, l, None, &mut out);
        }
        ScopeKind::Network => {
            for l in network.param_layers() {
                layer_activations(network, trace, l, None, &mut out);
            }
        }
    }
    Ok(out)
}

fn layer_activations(
    network: &Network,
    trace: &Trace,
    l: usize,
    only_unit: Option<usize>,
    out: &mut Vec<WeightActivation>,
) {
    let layer = &network.layers()[l];
    let x = trace.layer_input(l);
    let params = network.params();
    let units: Vec<usize> = match only_unit {
        Some(u) => vec![u],
        None => (0..layer.units()).collect(),
    };
    match layer.spec.kind {
        LayerKind::Dense { .. } => {
            for u in units {
                let row = &params[layer.unit_range(u)];
                for (j, (&xj, &w)) in x.iter().zip(row).enumerate() {
                    out.push(WeightActivation::new(
                        WeightId::new(l, u, j),
                        xj as f64 * w as f64,
                    ));
                }
                let b = row[row.len() - 1] as f64;
                out.push(WeightActivation::new(WeightId::bias(l, u), b));
            }
        }
        LayerKind::Conv2d {
            kernel, padding, ..
        } => {
            let sums = window_sums(x, layer.input, kernel, padding, layer.output);
            let positions = (layer.output.height * layer.output.width) as f64;
            for u in units {
                let row = &params[layer.unit_range(u)];
                for (j, (&s, &w)) in sums.iter().zip(row).enumerate() {
                    out.push(WeightActivation::new(WeightId::new(l, u, j), s * w as f64));
                }
                let b = row[row.len() - 1] as f64;
                out.push(WeightActivation::new(WeightId::bias(l, u), b * positions));
            }
        }
        LayerKind::MaxPool { .. } | LayerKind::Flatten => {}
    }
}

/// For each kernel tap `(c, ky, kx)`, the sum of the inputs it touches over all
/// output positions (zero padding contributes nothing).
fn window_sums(
    x: &[f32],
    input: crate::nn::Shape,
    k: usize,
    pad: usize,
    output: crate::nn::Shape,
) -> Vec<f64> {
    let (h, w) = (input.height as isize, input.width as isize);
    let mut sums = vec![0f64; input.channels * k * k];
    for c in 0..input.channels {
        let plane = &x[c * input.height * input.width..][..input.height * input.width];
        for ky in 0..k {
            for kx in 0..k {
                let mut s = 0f64;
                for oy in 0..output.height {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for ox in 0..output.width {
                        let ix = (ox + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w {
                            s += plane[(iy * w + ix) as usize] as f64;
                        }
                    }
                }
                sums[(c * k + ky) * k + kx] = s;
            }
        }
    }
    sums
}

fn by_magnitude(a: &WeightActivation, b: &WeightActivation) -> Ordering {
    b.magnitude
        .partial_cmp(&a.magnitude)
        .unwrap_or(Ordering::Equal)
        .then(a.weight.cmp(&b.weight))
}

/// Selected weights, strongest first; ties go to the lowest [`WeightId`].
/// A z-score selection may be empty.
pub fn select_weights(
    activations: &[WeightActivation],
    selection: Selection,
) -> Result<Vec<WeightId>> {
    selection.validate()?;
    if activations.is_empty() {
        return Err(Error::config("scope", "no weights in scope"));
    }
    let mut ranked = activations.to_vec();
    ranked.sort_by(by_magnitude);
    let chosen: Vec<WeightId> = match selection {
        Selection::Argmax => vec![ranked[0].weight],
        Selection::TopK(k) => {
            if k > ranked.len() {
                return Err(Error::config(
                    "selection",
                    format!("top-{k} requested but only {} weights in scope", ranked.len()),
                ));
            }
            ranked[..k].iter().map(|a| a.weight).collect()
        }
        Selection::ZScore(t) => {
            let mags: Vec<f64> = activations.iter().map(|a| a.magnitude).collect();
            let (mean, std) = crate::ledger::mean_std(&mags);
            if std == 0.0 {
                Vec::new()
            } else {
                ranked
                    .iter()
                    .filter(|a| (a.magnitude - mean) / std > t)
                    .map(|a| a.weight)
                    .collect()
            }
        }
    };
    Ok(chosen)
}
