//! Datasets: IDX parsing, synthetic blobs and mini-batch sampling.

mod idx;
mod sampler;
mod synth;

pub use idx::{
    parse_idx, read_idx_file, IdxError, IdxFile, IdxHeader, IDX_MAGIC_IMAGES, IDX_MAGIC_LABELS,
};
pub use sampler::BatchSampler;
pub use synth::synth_classification;

use crate::error::{Error, Result};

/// Row-major `N × F` feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_len: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        feature_len: usize,
        classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("dataset must contain at least one sample".into()));
        }
        if feature_len == 0 || classes == 0 {
            return Err(Error::InvalidArgument(
                "feature length and class count must be >= 1".into(),
            ));
        }
        if features.len() != labels.len() * feature_len {
            return Err(Error::LengthMismatch {
                expected: labels.len() * feature_len,
                found: features.len(),
            });
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {y} of sample {i} is not below the class count {classes}"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            feature_len,
            classes,
        })
    }

    /// Joins an image file and a label file of equal length.
    pub fn from_idx(images: &IdxFile, labels: &IdxFile, classes: usize) -> Result<Self> {
        let features = images.to_images()?;
        let labels = labels.to_labels()?;
        let feature_len = images.header.item_len();
        Dataset::new(features, labels, feature_len, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_len..(i + 1) * self.feature_len]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// New dataset holding the given rows in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.feature_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "row {i} out of range for dataset of {} samples",
                    self.len()
                )));
            }
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.feature_len, self.classes)
    }

    /// First `n` rows (or all of them when `n >= len`).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Splits off the last `test_len` rows.
    pub fn split_tail(&self, test_len: usize) -> Result<(Dataset, Dataset)> {
        if test_len == 0 || test_len >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot split {test_len} test rows from {} samples",
                self.len()
            )));
        }
        let cut = self.len() - test_len;
        let train: Vec<usize> = (0..cut).collect();
        let test: Vec<usize> = (cut..self.len()).collect();
        Ok((self.select(&train)?, self.select(&test)?))
    }
}
