//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::cell::RefCell;

use responsibility::dataset::Dataset;
use responsibility::nn::{
    train, Activation, FnSink, LayerKind, Network, TrainConfig, WeightId,
};

/// Plain f64 forward pass reading parameters through `WeightId` lookups, so
/// it shares nothing with the network's own kernels. Returns the final
/// pre-activation (logits).
pub fn forward_f64(net: &Network, params: &[f64], input: &[f32]) -> Vec<f64> {
    let p = |id: WeightId| params[net.weight_index(id).expect("valid weight")];
    let mut x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let mut logits = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        let (c, h, w) = (layer.input.channels, layer.input.height, layer.input.width);
        let z: Vec<f64> = match layer.spec.kind {
            LayerKind::Dense { units } => (0..units)
                .map(|u| {
                    let mut s = p(WeightId::bias(l, u));
                    for (i, xi) in x.iter().enumerate() {
                        s += xi * p(WeightId::new(l, u, i));
                    }
                    s
                })
                .collect(),
            LayerKind::Conv2d {
                filters,
                kernel,
                padding,
            } => {
                let oh = h + 2 * padding - kernel + 1;
                let ow = w + 2 * padding - kernel + 1;
                let at = |ch: usize, yy: isize, xx: isize| -> f64 {
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        0.0
                    } else {
                        x[(ch * h + yy as usize) * w + xx as usize]
                    }
                };
                let mut z = vec![0.0; filters * oh * ow];
                for f in 0..filters {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = p(WeightId::bias(l, f));
                            for ch in 0..c {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let yy = (oy + ky) as isize - padding as isize;
                                        let xx = (ox + kx) as isize - padding as isize;
                                        let wid = WeightId::new(l, f, (ch * kernel + ky) * kernel + kx);
                                        s += at(ch, yy, xx) * p(wid);
                                    }
                                }
                            }
                            z[(f * oh + oy) * ow + ox] = s;
                        }
                    }
                }
                z
            }
            LayerKind::MaxPool { size } => {
                let (oh, ow) = (h / size, w / size);
                let mut z = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            for dy in 0..size {
                                for dx in 0..size {
                                    best = best.max(x[(ch * h + oy * size + dy) * w + ox * size + dx]);
                                }
                            }
                            z[(ch * oh + oy) * ow + ox] = best;
                        }
                    }
                }
                z
            }
            LayerKind::Flatten => x.clone(),
        };
        x = match layer.spec.activation {
            Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
            Activation::Identity => z.clone(),
            Activation::Softmax => {
                logits = z.clone();
                softmax_f64(&z)
            }
        };
        if l + 1 == net.layers().len() && logits.is_empty() {
            logits = z;
        }
    }
    logits
}

pub fn softmax_f64(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn cross_entropy_f64(net: &Network, params: &[f64], input: &[f32], label: usize) -> f64 {
    let z = forward_f64(net, params, input);
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - z[label]
}

/// Central finite-difference gradient of the f64 cross-entropy.
pub fn numeric_gradient(net: &Network, input: &[f32], label: usize, h: f64) -> Vec<f64> {
    let mut params: Vec<f64> = net.params().iter().map(|&v| v as f64).collect();
    (0..params.len())
        .map(|i| {
            let orig = params[i];
            params[i] = orig + h;
            let up = cross_entropy_f64(net, &params, input, label);
            params[i] = orig - h;
            let down = cross_entropy_f64(net, &params, input, label);
            params[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Ledger rebuilt from parameter snapshots taken after every step:
/// `delta = after - before` on each tracked weight, credited to every
/// member of the step's batch. Indexed `[weight][position]`.
#[derive(Debug, Clone)]
pub struct SnapshotLedger {
    pub weights: Vec<WeightId>,
    pub mag: Vec<Vec<f64>>,
    pub pos: Vec<Vec<f64>>,
    pub neg: Vec<Vec<f64>>,
    /// `[neuron][position]` for the final layer, `(positive, negative)` credits.
    pub freq_pos: Vec<Vec<u32>>,
    pub freq_neg: Vec<Vec<u32>>,
}

impl SnapshotLedger {
    pub fn argmax(values: &[f64]) -> usize {
        let mut best = 0;
        for m in 1..values.len() {
            if values[m] > values[best] {
                best = m;
            }
        }
        best
    }
}

pub fn snapshot_ledger(net: &mut Network, data: &Dataset, config: &TrainConfig) -> SnapshotLedger {
    let mut weights = Vec::new();
    for &l in &config.tracked_layers {
        weights.extend(net.layer_weight_ids(l));
    }
    weights.sort();
    let flat: Vec<usize> = weights.iter().map(|&w| net.weight_index(w).unwrap()).collect();
    let n = data.len();
    let last = net.last_layer();
    let classes = net.classes();
    let track_last = config.tracked_layers.contains(&last);
    let state = RefCell::new((
        net.params().to_vec(),
        vec![vec![0.0; n]; weights.len()],
        vec![vec![0.0; n]; weights.len()],
        vec![vec![0.0; n]; weights.len()],
        vec![vec![0u32; n]; if track_last { classes } else { 0 }],
        vec![vec![0u32; n]; if track_last { classes } else { 0 }],
    ));
    let sink = FnSink(|rec: &responsibility::nn::WeightDeltaRecord, after: &Network| {
        let mut s = state.borrow_mut();
        let (prev, mag, pos, neg, fp, fne) = &mut *s;
        let now = after.params();
        let deltas: Vec<f32> = flat.iter().map(|&f| now[f] - prev[f]).collect();
        for &m in &rec.batch_indices {
            for (i, &d) in deltas.iter().enumerate() {
                let d = d as f64;
                mag[i][m] += d.abs();
                pos[i][m] += d.max(0.0);
                neg[i][m] += (-d).max(0.0);
            }
        }
        if track_last {
            for unit in 0..classes {
                let net_change: f64 = weights
                    .iter()
                    .zip(&deltas)
                    .filter(|(w, _)| w.layer == last && w.unit == unit)
                    .map(|(_, &d)| d as f64)
                    .sum();
                for &m in &rec.batch_indices {
                    if net_change > 0.0 {
                        fp[unit][m] += 1;
                    } else if net_change < 0.0 {
                        fne[unit][m] += 1;
                    }
                }
            }
        }
        prev.copy_from_slice(now);
        Ok(())
    });
    train(net, data, config, sink).expect("oracle training");
    let (_, mag, pos, neg, freq_pos, freq_neg) = state.into_inner();
    SnapshotLedger {
        weights,
        mag,
        pos,
        neg,
        freq_pos,
        freq_neg,
    }
}

/// `|a - b| <= tol * max(|a|, |b|)`, exact equality for zeros.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}
