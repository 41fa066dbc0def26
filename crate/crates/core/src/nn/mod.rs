//! Minimal deterministic feed-forward network.
//!
//! Parameters live in one flat `f32` store. Each parameterized layer owns a
//! contiguous block of `units x (fan_in + 1)` values: one row per output unit
//! (dense neuron or convolution filter), `fan_in` weights followed by the
//! bias. The flat order therefore equals [`WeightId`] order, which is what the
//! checkpoint format and the responsibility ledger rely on.

pub mod arch;
mod checkpoint;
pub(crate) mod kernels;
mod train;

use std::fmt;
use std::ops::Range;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};
use kernels::{axpy, conv_backward, conv_forward, dot, pad_input, ConvGeometry};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use train::{
    sgd_step, train, BatchItem, DeltaSink, EpochStats, FnSink, NoSink, StepOutcome, TrackedSet,
    TrainConfig, TrainReport, WeightDeltaRecord,
};

/// Tensor shape in channel-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn flat(len: usize) -> Self {
        Self::new(len, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    /// Only valid on the final dense layer.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        units: usize,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        padding: usize,
    },
    MaxPool {
        size: usize,
    },
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(units: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense { units },
            activation,
        }
    }

    pub fn conv(filters: usize, kernel: usize, padding: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Conv2d {
                filters,
                kernel,
                padding,
            },
            activation,
        }
    }

    pub fn max_pool(size: usize) -> Self {
        Self {
            kind: LayerKind::MaxPool { size },
            activation: Activation::Identity,
        }
    }

    pub fn flatten() -> Self {
        Self {
            kind: LayerKind::Flatten,
            activation: Activation::Identity,
        }
    }
}

/// Loss attached to the network's output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    /// Softmax output, `-ln p[label]`.
    CrossEntropy,
    /// Identity output, `sum_k (y_k - t_k)^2` with `t = targets[label]`.
    SquaredError { targets: Vec<Vec<f32>> },
}

/// Stable address of one parameter: (layer, output unit, input).
///
/// `unit` is a dense neuron or a convolution filter. For dense layers `input`
/// indexes the flattened layer input; for convolutions it indexes
/// `(channel, ky, kx)`. Biases use [`WeightId::BIAS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WeightId {
    pub layer: usize,
    pub unit: usize,
    pub input: usize,
}

impl WeightId {
    pub const BIAS: usize = usize::MAX;

    pub const fn new(layer: usize, unit: usize, input: usize) -> Self {
        Self { layer, unit, input }
    }

    pub const fn bias(layer: usize, unit: usize) -> Self {
        Self::new(layer, unit, Self::BIAS)
    }

    pub const fn is_bias(&self) -> bool {
        self.input == Self::BIAS
    }
}

impl fmt::Display for WeightId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_bias() {
            write!(f, "L{}:u{}:bias", self.layer, self.unit)
        } else {
            write!(f, "L{}:u{}:i{}", self.layer, self.unit, self.input)
        }
    }
}

/// A neuron (dense unit or convolution filter) of a parameterized layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub unit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    param_offset: usize,
    units: usize,
    fan_in: usize,
}

impl Layer {
    pub fn has_params(&self) -> bool {
        self.units > 0
    }

    /// Output units (neurons or filters); zero for parameterless layers.
    pub fn units(&self) -> usize {
        self.units
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn param_range(&self) -> Range<usize> {
        self.param_offset..self.param_offset + self.units * (self.fan_in + 1)
    }

    pub fn unit_range(&self, unit: usize) -> Range<usize> {
        let start = self.param_offset + unit * (self.fan_in + 1);
        start..start + self.fan_in + 1
    }
}

/// Values retained from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `values[0]` is the input, `values[k + 1]` the output of layer `k`.
    pub values: Vec<Vec<f32>>,
    /// Pre-activation output of each parameterized layer (empty otherwise).
    pub pre: Vec<Vec<f32>>,
    pool_argmax: Vec<Vec<u32>>,
}

impl Trace {
    /// Class probabilities (or raw outputs for a squared-error head).
    pub fn output(&self) -> &[f32] {
        self.values.last().expect("trace holds the input")
    }

    /// Input to layer `layer`.
    pub fn layer_input(&self, layer: usize) -> &[f32] {
        &self.values[layer]
    }

    pub fn predicted(&self) -> usize {
        argmax(self.output())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: Shape,
    layers: Vec<Layer>,
    loss: Loss,
    params: Vec<f32>,
    seed: u64,
}

impl Network {
    /// Builds a network with Glorot-uniform weights (`r = sqrt(6 / (fan_in + fan_out))`)
    /// drawn from a ChaCha8 stream seeded with `seed`, and zero biases.
    pub fn new(input: Shape, specs: &[LayerSpec], loss: Loss, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(input, specs, loss, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &net.layers {
            if !layer.has_params() {
                continue;
            }
            let fan_out = match layer.spec.kind {
                LayerKind::Conv2d {
                    filters, kernel, ..
                } => filters * kernel * kernel,
                _ => layer.units,
            };
            let r = (6.0 / (layer.fan_in + fan_out) as f64).sqrt() as f32;
            let dist = Uniform::new_inclusive(-r, r);
            for unit in 0..layer.units {
                let row = layer.unit_range(unit);
                let weights = row.start..row.end - 1;
                for p in &mut net.params[weights] {
                    *p = dist.sample(&mut rng);
                }
            }
        }
        Ok(net)
    }

    /// Same topology as [`Network::new`] with every parameter set to zero.
    pub fn zeroed(input: Shape, specs: &[LayerSpec], loss: Loss, seed: u64) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::config("input_shape", "input shape must be non-empty"));
        }
        if specs.is_empty() {
            return Err(Error::config("layers", "network needs at least one layer"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input;
        let mut offset = 0usize;
        for (idx, spec) in specs.iter().enumerate() {
            let is_last = idx + 1 == specs.len();
            if spec.activation == Activation::Softmax && !is_last {
                return Err(Error::config(
                    "layers",
                    format!("layer {idx}: softmax is only allowed on the final layer"),
                ));
            }
            let (output, units, fan_in) = match spec.kind {
                LayerKind::Dense { units } => {
                    if units == 0 {
                        return Err(Error::config("layers", format!("layer {idx}: zero units")));
                    }
                    (Shape::flat(units), units, shape.len())
                }
                LayerKind::Conv2d {
                    filters,
                    kernel,
                    padding,
                } => {
                    let (ph, pw) = (shape.height + 2 * padding, shape.width + 2 * padding);
                    if filters == 0 || kernel == 0 || kernel > ph || kernel > pw {
                        return Err(Error::config(
                            "layers",
                            format!("layer {idx}: conv {filters}@{kernel}x{kernel} does not fit input {shape}"),
                        ));
                    }
                    (
                        Shape::new(filters, ph - kernel + 1, pw - kernel + 1),
                        filters,
                        shape.channels * kernel * kernel,
                    )
                }
                LayerKind::MaxPool { size } => {
                    if size == 0 || size > shape.height || size > shape.width {
                        return Err(Error::config(
                            "layers",
                            format!("layer {idx}: pool size {size} does not fit input {shape}"),
                        ));
                    }
                    (
                        Shape::new(shape.channels, shape.height / size, shape.width / size),
                        0,
                        0,
                    )
                }
                LayerKind::Flatten => (Shape::flat(shape.len()), 0, 0),
            };
            if units == 0 && spec.activation != Activation::Identity {
                return Err(Error::config(
                    "layers",
                    format!("layer {idx}: parameterless layers take no activation"),
                ));
            }
            layers.push(Layer {
                spec: *spec,
                input: shape,
                output,
                param_offset: offset,
                units,
                fan_in,
            });
            offset += units * (fan_in + 1);
            shape = output;
        }
        let last = layers.last().expect("non-empty");
        if !matches!(last.spec.kind, LayerKind::Dense { .. }) {
            return Err(Error::config("layers", "final layer must be dense"));
        }
        match (&loss, last.spec.activation) {
            (Loss::CrossEntropy, Activation::Softmax) => {}
            (Loss::SquaredError { targets }, Activation::Identity) => {
                if targets.is_empty() || targets.iter().any(|t| t.len() != last.units) {
                    return Err(Error::config(
                        "loss",
                        format!("squared-error targets must each have {} values", last.units),
                    ));
                }
            }
            _ => {
                return Err(Error::config(
                    "loss",
                    "cross-entropy needs a softmax head, squared error an identity head",
                ))
            }
        }
        Ok(Self {
            input,
            layers,
            loss,
            params: vec![0.0; offset],
            seed,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn loss(&self) -> &Loss {
        &self.loss
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of output classes.
    pub fn classes(&self) -> usize {
        self.layers.last().expect("non-empty").units
    }

    pub fn last_layer(&self) -> usize {
        self.layers.len() - 1
    }

    /// Indices of layers that own parameters.
    pub fn param_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&l| self.layers[l].has_params())
            .collect()
    }

    pub fn first_param_layer(&self) -> usize {
        self.param_layers()[0]
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn weight_index(&self, id: WeightId) -> Option<usize> {
        let layer = self.layers.get(id.layer)?;
        if id.unit >= layer.units {
            return None;
        }
        let col = if id.is_bias() {
            layer.fan_in
        } else if id.input < layer.fan_in {
            id.input
        } else {
            return None;
        };
        Some(layer.unit_range(id.unit).start + col)
    }

    /// Inverse of [`Network::weight_index`].
    pub fn weight_id(&self, flat: usize) -> Option<WeightId> {
        let (idx, layer) = self
            .layers
            .iter()
            .enumerate()
            .find(|(_, l)| l.param_range().contains(&flat))?;
        let rel = flat - layer.param_offset;
        let stride = layer.fan_in + 1;
        let (unit, col) = (rel / stride, rel % stride);
        Some(if col == layer.fan_in {
            WeightId::bias(idx, unit)
        } else {
            WeightId::new(idx, unit, col)
        })
    }

    /// All weight ids of a layer in flat order.
    pub fn layer_weight_ids(&self, layer: usize) -> Vec<WeightId> {
        let l = &self.layers[layer];
        let mut ids = Vec::with_capacity(l.units * (l.fan_in + 1));
        for unit in 0..l.units {
            ids.extend((0..l.fan_in).map(|i| WeightId::new(layer, unit, i)));
            ids.push(WeightId::bias(layer, unit));
        }
        ids
    }

    pub fn weight(&self, id: WeightId) -> Option<f32> {
        self.weight_index(id).map(|i| self.params[i])
    }

    pub fn set_weight(&mut self, id: WeightId, value: f32) -> Result<()> {
        let idx = self.weight_index(id).ok_or(Error::IndexOutOfRange {
            what: "network parameters",
            index: id.input,
            len: self.params.len(),
        })?;
        self.params[idx] = value;
        Ok(())
    }

    fn check_input(&self, input: &[f32]) -> Result<()> {
        if input.len() != self.input.len() {
            return Err(Error::shape(
                "network input",
                format!("{} values ({})", self.input.len(), self.input),
                format!("{} values", input.len()),
            ));
        }
        Ok(())
    }

    /// Runs the network and keeps every intermediate activation.
    pub fn forward(&self, input: &[f32]) -> Result<Trace> {
        self.check_input(input)?;
        Ok(self.forward_unchecked(input))
    }

    /// Class probabilities only.
    pub fn predict(&self, input: &[f32]) -> Result<Vec<f32>> {
        Ok(self.forward(input)?.values.pop().expect("non-empty"))
    }

    pub fn predict_class(&self, input: &[f32]) -> Result<usize> {
        Ok(argmax(&self.predict(input)?))
    }

    pub(crate) fn forward_unchecked(&self, input: &[f32]) -> Trace {
        let n = self.layers.len();
        let mut values = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        let mut pool_argmax = Vec::with_capacity(n);
        values.push(input.to_vec());
        for layer in &self.layers {
            let x = values.last().expect("non-empty");
            let params = &self.params[layer.param_range()];
            let mut argmaxes = Vec::new();
            let (z, y) = match layer.spec.kind {
                LayerKind::Dense { units } => {
                    let stride = layer.fan_in + 1;
                    let z: Vec<f32> = (0..units)
                        .map(|u| {
                            let row = &params[u * stride..][..stride];
                            dot(&row[..layer.fan_in], x) + row[layer.fan_in]
                        })
                        .collect();
                    let y = activate(layer.spec.activation, &z);
                    (z, y)
                }
                LayerKind::Conv2d {
                    filters,
                    kernel,
                    padding,
                } => {
                    let s = layer.input;
                    let padded = pad_input(x, s.channels, s.height, s.width, padding);
                    let g = ConvGeometry {
                        in_channels: s.channels,
                        height: s.height + 2 * padding,
                        width: s.width + 2 * padding,
                        kernel,
                        filters,
                    };
                    let mut z = vec![0f32; layer.output.len()];
                    conv_forward(&g, &padded, params, &mut z);
                    let y = activate(layer.spec.activation, &z);
                    (z, y)
                }
                LayerKind::MaxPool { size } => {
                    let (s, o) = (layer.input, layer.output);
                    let mut y = vec![0f32; o.len()];
                    argmaxes = vec![0u32; o.len()];
                    for c in 0..s.channels {
                        for oy in 0..o.height {
                            for ox in 0..o.width {
                                let mut best = (c * s.height + oy * size) * s.width + ox * size;
                                for dy in 0..size {
                                    for dx in 0..size {
                                        let idx = (c * s.height + oy * size + dy) * s.width
                                            + ox * size
                                            + dx;
                                        if x[idx] > x[best] {
                                            best = idx;
                                        }
                                    }
                                }
                                let out = (c * o.height + oy) * o.width + ox;
                                y[out] = x[best];
                                argmaxes[out] = best as u32;
                            }
                        }
                    }
                    (Vec::new(), y)
                }
                LayerKind::Flatten => (Vec::new(), x.clone()),
            };
            pre.push(z);
            pool_argmax.push(argmaxes);
            values.push(y);
        }
        Trace {
            values,
            pre,
            pool_argmax,
        }
    }

    /// Loss of one example in 64-bit precision.
    pub fn example_loss(&self, trace: &Trace, label: usize) -> f64 {
        let last = self.layers.len() - 1;
        match &self.loss {
            Loss::CrossEntropy => {
                let z = &trace.pre[last];
                let max = z.iter().fold(f32::NEG_INFINITY, |a, b| a.max(*b)) as f64;
                let lse = z.iter().map(|v| (*v as f64 - max).exp()).sum::<f64>().ln() + max;
                lse - z[label] as f64
            }
            Loss::SquaredError { targets } => trace
                .output()
                .iter()
                .zip(&targets[label])
                .map(|(y, t)| {
                    let d = *y as f64 - *t as f64;
                    d * d
                })
                .sum(),
        }
    }

    /// Loss and full parameter gradient for a single example.
    pub fn gradient(&self, input: &[f32], label: usize) -> Result<(f64, Vec<f32>)> {
        self.check_input(input)?;
        self.check_label(label)?;
        let trace = self.forward_unchecked(input);
        let mut grad = vec![0f32; self.params.len()];
        self.backward(&trace, label, &mut grad);
        Ok((self.example_loss(&trace, label), grad))
    }

    pub(crate) fn check_label(&self, label: usize) -> Result<()> {
        let limit = match &self.loss {
            Loss::CrossEntropy => self.classes(),
            Loss::SquaredError { targets } => targets.len(),
        };
        if label >= limit {
            return Err(Error::IndexOutOfRange {
                what: "class labels",
                index: label,
                len: limit,
            });
        }
        Ok(())
    }

    /// Accumulates `dLoss/dparam` for one example into `grad`.
    pub(crate) fn backward(&self, trace: &Trace, label: usize, grad: &mut [f32]) {
        let last = self.layers.len() - 1;
        // Gradient with respect to the output of the current layer; for the
        // head it is already taken with respect to the pre-activation.
        let mut delta: Vec<f32> = match &self.loss {
            Loss::CrossEntropy => {
                let mut d = trace.output().to_vec();
                d[label] -= 1.0;
                d
            }
            Loss::SquaredError { targets } => trace
                .output()
                .iter()
                .zip(&targets[label])
                .map(|(y, t)| 2.0 * (y - t))
                .collect(),
        };
        let first_param = self.first_param_layer();
        for idx in (0..=last).rev() {
            let layer = &self.layers[idx];
            let x = &trace.values[idx];
            let need_input_grad = idx > first_param;
            match layer.spec.kind {
                LayerKind::Dense { units } => {
                    if idx != last {
                        apply_activation_grad(layer.spec.activation, &trace.pre[idx], &mut delta);
                    }
                    let stride = layer.fan_in + 1;
                    let range = layer.param_range();
                    let params = &self.params[range.clone()];
                    let g = &mut grad[range];
                    let mut dx = if need_input_grad {
                        vec![0f32; layer.fan_in]
                    } else {
                        Vec::new()
                    };
                    for (u, &d) in delta.iter().enumerate().take(units) {
                        if d == 0.0 {
                            continue;
                        }
                        let grow = &mut g[u * stride..][..stride];
                        axpy(d, x, &mut grow[..layer.fan_in]);
                        grow[layer.fan_in] += d;
                        if need_input_grad {
                            axpy(d, &params[u * stride..][..layer.fan_in], &mut dx);
                        }
                    }
                    delta = dx;
                }
                LayerKind::Conv2d {
                    filters,
                    kernel,
                    padding,
                } => {
                    apply_activation_grad(layer.spec.activation, &trace.pre[idx], &mut delta);
                    let s = layer.input;
                    let padded = pad_input(x, s.channels, s.height, s.width, padding);
                    let g = ConvGeometry {
                        in_channels: s.channels,
                        height: s.height + 2 * padding,
                        width: s.width + 2 * padding,
                        kernel,
                        filters,
                    };
                    let range = layer.param_range();
                    let mut dpadded = need_input_grad.then(|| vec![0f32; padded.len()]);
                    conv_backward(
                        &g,
                        &padded,
                        &self.params[range.clone()],
                        &delta,
                        &mut grad[range],
                        dpadded.as_deref_mut(),
                    );
                    delta = match dpadded {
                        Some(dp) => crop(&dp, s, padding),
                        None => Vec::new(),
                    };
                }
                LayerKind::MaxPool { .. } => {
                    let mut dx = vec![0f32; layer.input.len()];
                    for (out, &src) in trace.pool_argmax[idx].iter().enumerate() {
                        dx[src as usize] += delta[out];
                    }
                    delta = dx;
                }
                LayerKind::Flatten => {}
            }
            if !need_input_grad && layer.has_params() {
                break;
            }
        }
    }
}

fn crop(padded: &[f32], s: Shape, pad: usize) -> Vec<f32> {
    if pad == 0 {
        return padded.to_vec();
    }
    let (ph, pw) = (s.height + 2 * pad, s.width + 2 * pad);
    let mut out = Vec::with_capacity(s.len());
    for c in 0..s.channels {
        for y in 0..s.height {
            out.extend_from_slice(&padded[(c * ph + y + pad) * pw + pad..][..s.width]);
        }
    }
    out
}

fn activate(activation: Activation, z: &[f32]) -> Vec<f32> {
    match activation {
        Activation::Identity => z.to_vec(),
        Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
        Activation::Softmax => softmax(z),
    }
}

fn apply_activation_grad(activation: Activation, pre: &[f32], delta: &mut [f32]) {
    match activation {
        Activation::Identity => {}
        Activation::Relu => {
            for (d, z) in delta.iter_mut().zip(pre) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        Activation::Softmax => unreachable!("softmax only on the head"),
    }
}

/// Numerically stable softmax, normalized in 64-bit.
pub fn softmax(z: &[f32]) -> Vec<f32> {
    let max = z.iter().fold(f32::NEG_INFINITY, |a, b| a.max(*b)) as f64;
    let exps: Vec<f64> = z.iter().map(|v| (*v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}
