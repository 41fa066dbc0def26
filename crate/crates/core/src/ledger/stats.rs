use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::nn::WeightId;

/// Size of each extremes list.
pub const EXTREME_COUNT: usize = 20;
pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extreme {
    pub weight: WeightId,
    pub position: usize,
    pub value: f64,
}

/// Equal-width bins over `[min, max]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn compute(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if values.is_empty() {
            return Self {
                edges: vec![0.0, 0.0],
                counts: vec![0],
            };
        }
        if lo == hi {
            return Self {
                edges: vec![lo, hi],
                counts: vec![values.len() as u64],
            };
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|b| if b == bins { hi } else { lo + width * b as f64 })
            .collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self { edges, counts }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lower,upper,count\n");
        for (b, c) in self.counts.iter().enumerate() {
            writeln!(out, "{:e},{:e},{c}", self.edges[b], self.edges[b + 1]).unwrap();
        }
        out
    }
}

/// Distribution of the signed net values `R_pos - R_neg` of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedStats {
    pub layer: usize,
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Largest values, descending.
    pub max: Vec<Extreme>,
    /// Smallest values, ascending.
    pub min: Vec<Extreme>,
    pub histogram: Histogram,
}

impl SignedStats {
    /// `values` is weight-major: entry `w * n + m` belongs to `weights[w]`, position `m`.
    pub fn compute(layer: usize, values: &[f64], weights: &[WeightId], n: usize) -> Self {
        let count = values.len();
        let (mean, std) = mean_std(values);
        let extreme = |flat: usize| Extreme {
            weight: weights[flat / n],
            position: flat % n,
            value: values[flat],
        };
        let desc = |a: &usize, b: &usize| {
            values[*b]
                .partial_cmp(&values[*a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(b))
        };
        let asc = |a: &usize, b: &usize| {
            values[*a]
                .partial_cmp(&values[*b])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(b))
        };
        let max = smallest_by(count, EXTREME_COUNT, desc)
            .into_iter()
            .map(extreme)
            .collect();
        let min = smallest_by(count, EXTREME_COUNT, asc)
            .into_iter()
            .map(extreme)
            .collect();
        Self {
            layer,
            count,
            mean,
            std,
            max,
            min,
            histogram: Histogram::compute(values, HISTOGRAM_BINS),
        }
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "layer,count,mean,std\n{},{},{:e},{:e}\n",
            self.layer, self.count, self.mean, self.std
        )
    }

    pub fn extremes_csv(&self) -> String {
        let mut out = String::from("kind,rank,weight,position,value\n");
        for (kind, list) in [("max", &self.max), ("min", &self.min)] {
            for (rank, e) in list.iter().enumerate() {
                writeln!(
                    out,
                    "{kind},{rank},{},{},{:e}",
                    e.weight, e.position, e.value
                )
                .unwrap();
            }
        }
        out
    }
}

/// Mean and population standard deviation (two-pass, sequential order).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// The first `k` of `0..len` under `cmp`, sorted.
fn smallest_by(len: usize, k: usize, cmp: impl Fn(&usize, &usize) -> Ordering) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    let k = k.min(len);
    if k == 0 {
        return Vec::new();
    }
    if k < len {
        idx.select_nth_unstable_by(k - 1, &cmp);
        idx.truncate(k);
    }
    idx.sort_by(&cmp);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_and_moments() {
        let weights = [WeightId::new(0, 0, 0), WeightId::new(0, 0, 1)];
        let values: Vec<f64> = (0..50).map(|v| v as f64 - 20.0).collect();
        let s = SignedStats::compute(0, &values, &weights, 25);
        assert_eq!(s.max.len(), 20);
        assert_eq!(s.min.len(), 20);
        assert_eq!(s.max[0].value, 29.0);
        assert_eq!((s.max[0].weight, s.max[0].position), (weights[1], 24));
        assert_eq!(s.min[0].value, -20.0);
        assert_eq!(s.min[19].value, -1.0);
        assert_eq!(s.mean, 4.5);
        let var: f64 = values.iter().map(|v| (v - 4.5) * (v - 4.5)).sum::<f64>() / 50.0;
        assert_eq!(s.std, var.sqrt());
        assert_eq!(s.histogram.counts.iter().sum::<u64>(), 50);
    }

    #[test]
    fn all_zero_values() {
        let s = SignedStats::compute(1, &[0.0; 6], &[WeightId::bias(1, 0)], 6);
        assert_eq!((s.mean, s.std), (0.0, 0.0));
        assert_eq!(s.max.len(), 6);
        assert_eq!(s.histogram.counts, vec![6]);
    }
}
