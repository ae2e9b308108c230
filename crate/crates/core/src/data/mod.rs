//! Datasets, MNIST IDX files, synthetic blobs and seeded retain/forget
//! splits. Record reads made through a [`DataView`] are counted per record,
//! which is how tests prove that unlearning never touches the forget set.

mod access;
mod idx;
mod split;
mod synth;

pub use access::{AccessTracker, DataView};
pub use idx::{
    load_idx, parse_idx_images, parse_idx_labels, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use split::{random_partition, split_forget, DatasetSplit};
pub use synth::synth_blobs;

use thiserror::Error;

use crate::nn::{Batch, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated IDX file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Labelled examples; `features` has shape `[n, ...feature shape]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.shape()[0];
        if features.shape().len() < 2 {
            return Err(DataError::InvalidArgument(
                "features need a leading example axis".into(),
            ));
        }
        if n != labels.len() {
            return Err(DataError::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::InvalidArgument(format!(
                "label {l} with {num_classes} classes"
            )));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn feature_len(&self) -> usize {
        self.features.row_len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The examples at `indices`, in that order. Reads made this way are not
    /// tracked; use a [`DataView`] inside training code.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let k = self.feature_len();
        let mut inputs = Vec::with_capacity(indices.len() * k);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(inputs, labels)
    }

    /// A new dataset holding copies of the examples at `indices`.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        if indices.is_empty() {
            return Err(DataError::InvalidArgument("empty subset".into()));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(DataError::InvalidArgument(format!(
                "index {i} out of range for {} examples",
                self.len()
            )));
        }
        let batch = self.gather(indices);
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.feature_shape());
        let features = Tensor::new(shape, batch.inputs)
            .map_err(|e| DataError::InvalidArgument(e.to_string()))?;
        Self::new(name, features, batch.labels, self.num_classes)
    }
}
