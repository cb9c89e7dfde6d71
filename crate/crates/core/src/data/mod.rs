//! Datasets, client partitioning, trigger stamping and poisoned batches.

mod idx;
mod partition;
mod synthetic;
mod trigger;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, load_idx_pair, parse_idx, write_idx};
pub use partition::{dirichlet_partition, label_entropy, PartitionPlan};
pub use synthetic::{gen_blobs, gen_synthetic, DEFAULT_BLOB_STD};
pub use trigger::{make_poison_batch, stamp, stamp_into, Corner, TriggerSpec};

use crate::error::{FlipError, Result};

/// Flattened images in `[0, 1]^d` with class labels.
///
/// Pixels live in one contiguous row-major buffer; `image(i)` borrows row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pixels: Vec<f64>,
    labels: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        pixels: Vec<f64>,
        labels: Vec<usize>,
        (width, height, channels): (usize, usize, usize),
        num_classes: usize,
    ) -> Result<Self> {
        let dim = width * height * channels;
        if dim == 0 {
            return Err(FlipError::InvalidArgument("image dimension is zero".into()));
        }
        if pixels.len() != dim * labels.len() {
            return Err(FlipError::InvalidArgument(format!(
                "{} pixels for {} images of dimension {dim}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(FlipError::InvalidArgument(format!("pixel {p} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(FlipError::InvalidArgument(format!(
                "label {l} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            pixels,
            labels,
            width,
            height,
            channels,
            num_classes,
        })
    }

    pub fn empty_like(other: &LabeledDataset) -> Self {
        Self {
            pixels: Vec::new(),
            labels: Vec::new(),
            width: other.width,
            height: other.height,
            channels: other.channels,
            num_classes: other.num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.pixels[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.pixels
            .chunks_exact(self.dim())
            .zip(self.labels.iter().copied())
    }

    /// New dataset holding the given sample indices, in order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let d = self.dim();
        let mut pixels = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            pixels,
            labels,
            ..LabeledDataset::empty_like(self)
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> LabeledDataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        self.select(&idx)
    }

    /// Indices of samples carrying `class`.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> LabeledDataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

/// A training batch with flat inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
}

impl Batch {
    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Self {
            inputs: Vec::with_capacity(dim * n),
            labels: Vec::with_capacity(n),
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, x: &[f64], label: usize) {
        debug_assert_eq!(x.len(), self.dim);
        self.inputs.extend_from_slice(x);
        self.labels.push(label);
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.inputs
            .chunks_exact(self.dim.max(1))
            .zip(self.labels.iter().copied())
    }

    pub fn extend(&mut self, other: &Batch) {
        debug_assert_eq!(self.dim, other.dim);
        self.inputs.extend_from_slice(&other.inputs);
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn from_dataset(ds: &LabeledDataset) -> Self {
        Self {
            inputs: ds.pixels.clone(),
            labels: ds.labels.clone(),
            dim: ds.dim(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        LabeledDataset::new(
            vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            vec![0, 1, 1],
            (2, 1, 1),
            2,
        )
        .unwrap()
    }

    #[test]
    fn accessors() {
        let ds = tiny();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.image(1), &[0.2, 0.3]);
        assert_eq!(ds.class_counts(), vec![1, 2]);
        assert_eq!(ds.class_indices(1), vec![1, 2]);
        let sub = ds.select(&[2, 0]);
        assert_eq!(sub.labels(), &[1, 0]);
        assert_eq!(sub.image(0), &[0.4, 0.5]);
        assert_eq!(ds.filter(|l| l == 0).len(), 1);
    }

    #[test]
    fn rejects_bad_contents() {
        assert!(LabeledDataset::new(vec![1.5, 0.0], vec![0], (2, 1, 1), 2).is_err());
        assert!(LabeledDataset::new(vec![0.5, 0.0], vec![2], (2, 1, 1), 2).is_err());
        assert!(LabeledDataset::new(vec![0.5], vec![0], (2, 1, 1), 2).is_err());
    }
}
