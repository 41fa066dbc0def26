use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Split {
    pub fn parts(&self) -> [&Dataset; 3] {
        [&self.train, &self.validation, &self.test]
    }
}

/// Largest-remainder rounding of `total * fractions`; ties go to the earlier part.
fn apportion(total: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| total as f64 * f).collect();
    let mut out = [0usize; 3];
    for (o, e) in out.iter_mut().zip(&exact) {
        *o = e.floor() as usize;
    }
    let mut left = total - out.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &j in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[j] > 0.0 {
            out[j] += 1;
            left -= 1;
        }
    }
    out
}

/// Per-class quotas: every entry lies within one example of `n_c * f_j`, rows
/// sum to the class sizes and columns to the global apportionment.
fn class_quotas(class_sizes: &[usize], fractions: &[f64; 3]) -> Result<Vec<[usize; 3]>> {
    let total: usize = class_sizes.iter().sum();
    let targets = apportion(total, fractions);
    let mut quotas: Vec<[usize; 3]> = class_sizes
        .iter()
        .map(|&n| fractions.map(|f| (n as f64 * f).floor() as usize))
        .collect();
    let mut residual: Vec<usize> = class_sizes
        .iter()
        .zip(&quotas)
        .map(|(&n, q)| n - q.iter().sum::<usize>())
        .collect();
    let mut demand = [0usize; 3];
    for j in 0..3 {
        let have: usize = quotas.iter().map(|q| q[j]).sum();
        demand[j] = targets[j].checked_sub(have).ok_or_else(|| {
            Error::Evaluation(format!("split rounding overshoot in part {j}"))
        })?;
    }
    // Each class hands its leftover examples to distinct parts, largest remaining
    // demand first (bipartite Havel-Hakimi).
    let mut classes: Vec<usize> = (0..class_sizes.len()).collect();
    classes.sort_by(|&a, &b| residual[b].cmp(&residual[a]).then(a.cmp(&b)));
    for c in classes {
        let mut parts = [0usize, 1, 2];
        parts.sort_by(|&a, &b| demand[b].cmp(&demand[a]).then(a.cmp(&b)));
        for &j in parts.iter().take(residual[c]) {
            if demand[j] == 0 || fractions[j] == 0.0 {
                return Err(Error::Evaluation(
                    "split quotas are not realizable".to_string(),
                ));
            }
            demand[j] -= 1;
            quotas[c][j] += 1;
        }
        residual[c] = 0;
    }
    Ok(quotas)
}

/// Stratified split into train/validation/test. Each part keeps source order and
/// the original stable indices. Part sizes follow largest-remainder rounding of
/// `n * fraction`, and each class contributes within one example of its share.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::config("fractions", "must be finite and non-negative"));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "fractions",
            format!("must sum to 1, got {sum}"),
        ));
    }
    let parts_used = fractions.iter().filter(|f| **f > 0.0).count();
    let sizes = dataset.class_counts();
    for (class, &n) in sizes.iter().enumerate() {
        if n > 0 && n < parts_used {
            return Err(Error::config(
                "fractions",
                format!("class {class} has {n} examples but {parts_used} splits need one each"),
            ));
        }
    }
    let quotas = class_quotas(&sizes, &fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned: [Vec<usize>; 3] = Default::default();
    for (class, quota) in quotas.iter().enumerate() {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&p| dataset.examples()[p].label == class)
            .collect();
        members.shuffle(&mut rng);
        let mut rest = members.as_slice();
        for (j, &q) in quota.iter().enumerate() {
            let (take, tail) = rest.split_at(q);
            assigned[j].extend_from_slice(take);
            rest = tail;
        }
    }
    let [train, validation, test] = assigned.map(|mut positions| {
        positions.sort_unstable();
        positions
    });
    Ok(Split {
        train: dataset.subset(&train)?,
        validation: dataset.subset(&validation)?,
        test: dataset.subset(&test)?,
    })
}
