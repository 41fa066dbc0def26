//! Image classification datasets with stable example indices.
//!
//! Every example carries the index it received when its source file was
//! loaded. Subsets, splits and relabelings keep that index, so anything
//! recorded against a subset can always be traced back to the source.

mod idx;
mod manifest;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::Reader;
use crate::nn::Shape;
use crate::{Error, Result};

pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use manifest::{DatasetManifest, IdxPair};
pub use split::{split, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub pixels: Vec<f32>,
    pub label: usize,
    /// Stable index assigned at load time.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    shape: Shape,
    class_count: usize,
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        shape: Shape,
        class_count: usize,
        examples: Vec<Example>,
    ) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::config("class_count", "must be >= 1"));
        }
        for ex in &examples {
            if ex.pixels.len() != shape.len() {
                return Err(Error::shape(
                    format!("example {}", ex.index),
                    shape.len(),
                    ex.pixels.len(),
                ));
            }
            if ex.label >= class_count {
                return Err(Error::IndexOutOfRange {
                    what: "class labels",
                    index: ex.label,
                    len: class_count,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            shape,
            class_count,
            examples,
        })
    }

    /// Builds a dataset whose stable indices are `0..n`.
    pub fn from_parts(
        name: impl Into<String>,
        shape: Shape,
        class_count: usize,
        images: Vec<Vec<f32>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape("labels", images.len(), labels.len()));
        }
        let examples = images
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(index, (pixels, label))| Example {
                pixels,
                label,
                index,
            })
            .collect();
        Self::new(name, shape, class_count, examples)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, position: usize) -> Option<&Example> {
        self.examples.get(position)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Stable indices in position order.
    pub fn indices(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.index).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    /// Position of the example with the given stable index.
    pub fn position_of(&self, index: usize) -> Option<usize> {
        self.examples.iter().position(|e| e.index == index)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Examples at `positions`, in the given order.
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        let examples = positions
            .iter()
            .map(|&p| {
                self.examples
                    .get(p)
                    .cloned()
                    .ok_or(Error::IndexOutOfRange {
                        what: "dataset positions",
                        index: p,
                        len: self.len(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: self.name.clone(),
            shape: self.shape,
            class_count: self.class_count,
            examples,
        })
    }

    /// Keeps only `classes` and relabels them `0..classes.len()` in the given order.
    pub fn select_classes(&self, classes: &[usize]) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::config("classes", "need at least one class"));
        }
        let mut map = BTreeMap::new();
        for (new, &old) in classes.iter().enumerate() {
            if old >= self.class_count || map.insert(old, new).is_some() {
                return Err(Error::config(
                    "classes",
                    format!("invalid or duplicate class {old}"),
                ));
            }
        }
        let examples = self
            .examples
            .iter()
            .filter_map(|e| {
                map.get(&e.label).map(|&label| Example {
                    label,
                    ..e.clone()
                })
            })
            .collect();
        Ok(Self {
            name: self.name.clone(),
            shape: self.shape,
            class_count: classes.len(),
            examples,
        })
    }

    /// Uniform sample of `count` examples without replacement, kept in source order.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Self> {
        if count > self.len() {
            return Err(Error::config(
                "sample",
                format!("requested {count} of {} examples", self.len()),
            ));
        }
        let mut positions: Vec<usize> = (0..self.len()).collect();
        positions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        positions.truncate(count);
        positions.sort_unstable();
        self.subset(&positions)
    }

    /// `per_class` uniformly drawn examples of every class, kept in source order.
    pub fn balanced_sample(&self, per_class: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positions = Vec::with_capacity(per_class * self.class_count);
        for class in 0..self.class_count {
            let mut members: Vec<usize> = (0..self.len())
                .filter(|&p| self.examples[p].label == class)
                .collect();
            if members.len() < per_class {
                return Err(Error::config(
                    "per_class",
                    format!("class {class} has only {} examples", members.len()),
                ));
            }
            members.shuffle(&mut rng);
            positions.extend_from_slice(&members[..per_class]);
        }
        positions.sort_unstable();
        self.subset(&positions)
    }

    /// Copy with labels replaced position-wise.
    pub fn relabeled(&self, labels: &[usize]) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::shape("labels", self.len(), labels.len()));
        }
        let examples = self
            .examples
            .iter()
            .zip(labels)
            .map(|(e, &label)| Example {
                label,
                ..e.clone()
            })
            .collect();
        Self::new(self.name.clone(), self.shape, self.class_count, examples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&SavedHeader {
            name: self.name.clone(),
            shape: self.shape,
            class_count: self.class_count,
            len: self.len(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + self.len() * (12 + 4 * self.shape.len()));
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for e in &self.examples {
            out.extend_from_slice(&(e.index as u64).to_le_bytes());
            out.extend_from_slice(&(e.label as u32).to_le_bytes());
            for p in &e.pixels {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut r = Reader {
            bytes: &bytes,
            pos: 0,
            origin: path,
        };
        if r.take(8)? != DATASET_MAGIC {
            return Err(Error::format(path, "not a dataset container (bad magic)"));
        }
        let header_len = r.u32()? as usize;
        let header: SavedHeader = serde_json::from_slice(r.take(header_len)?)?;
        let mut examples = Vec::with_capacity(header.len);
        for _ in 0..header.len {
            let index = r.u64()? as usize;
            let label = r.u32()? as usize;
            let raw = r.take(4 * header.shape.len())?;
            let pixels = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            examples.push(Example {
                pixels,
                label,
                index,
            });
        }
        Self::new(header.name, header.shape, header.class_count, examples)
    }
}

const DATASET_MAGIC: &[u8; 8] = b"RESPDATA";

#[derive(Serialize, Deserialize)]
struct SavedHeader {
    name: String,
    shape: Shape,
    class_count: usize,
    len: usize,
}

/// Ground truth of injected label noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRecord {
    /// Stable indices of flipped examples.
    pub flipped_indices: BTreeSet<usize>,
    /// Stable index -> label before flipping.
    pub original_labels: BTreeMap<usize, usize>,
    pub seed: u64,
    pub fraction: f64,
}

impl FlipRecord {
    pub fn len(&self) -> usize {
        self.flipped_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flipped_indices.is_empty()
    }

    pub fn is_flipped(&self, index: usize) -> bool {
        self.flipped_indices.contains(&index)
    }

    /// Restores the original label of every flipped example.
    pub fn restore(&self, dataset: &Dataset) -> Result<Dataset> {
        self.restore_only(dataset, self.flipped_indices.iter().copied())
    }

    /// Restores the original labels of the given stable indices; indices that
    /// were never flipped are left alone.
    pub fn restore_only(
        &self,
        dataset: &Dataset,
        indices: impl IntoIterator<Item = usize>,
    ) -> Result<Dataset> {
        let fix: BTreeSet<usize> = indices
            .into_iter()
            .filter(|i| self.flipped_indices.contains(i))
            .collect();
        let mut out = dataset.clone();
        for e in &mut out.examples {
            if fix.contains(&e.index) {
                e.label = self.original_labels[&e.index];
            }
        }
        Ok(out)
    }
}

/// Flips exactly `round(fraction * n)` labels chosen uniformly at random.
///
/// Binary datasets flip to the other class; with more classes the new label
/// is drawn uniformly from the remaining ones.
pub fn flip_labels(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, FlipRecord)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(
            "flip_fraction",
            format!("must lie in (0, 1), got {fraction}"),
        ));
    }
    if dataset.class_count() < 2 {
        return Err(Error::config("flip_labels", "need at least two classes"));
    }
    let count = (fraction * dataset.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<usize> = (0..dataset.len()).collect();
    positions.shuffle(&mut rng);
    positions.truncate(count);
    positions.sort_unstable();

    let mut out = dataset.clone();
    let mut record = FlipRecord {
        flipped_indices: BTreeSet::new(),
        original_labels: BTreeMap::new(),
        seed,
        fraction,
    };
    let others = Uniform::new(1, dataset.class_count());
    for p in positions {
        let e = &mut out.examples[p];
        let shift = if dataset.class_count() == 2 {
            1
        } else {
            others.sample(&mut rng)
        };
        record.flipped_indices.insert(e.index);
        record.original_labels.insert(e.index, e.label);
        e.label = (e.label + shift) % dataset.class_count();
    }
    Ok((out, record))
}

/// Gaussian-like blobs for small oracle tests: `n` examples of dimension
/// `dims`, labels assigned round-robin, class centres drawn from `seed`.
pub fn synthetic_blobs(n: usize, dims: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(-1.0f32, 1.0);
    let centres: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..dims).map(|_| 2.0 * unit.sample(&mut rng)).collect())
        .collect();
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let noise = |rng: &mut ChaCha8Rng| {
            (unit.sample(rng) + unit.sample(rng) + unit.sample(rng)) * 0.4
        };
        images.push(centres[label].iter().map(|c| c + noise(&mut rng)).collect());
        labels.push(label);
    }
    Dataset::from_parts("blobs", Shape::flat(dims), classes, images, labels)
        .expect("consistent by construction")
}
