//! Datasets: seeded synthetic mixtures, MNIST-style IDX files, labeled
//! subsets for semi-supervision, and a binary cache.

mod cache;
mod idx;
mod labeled;
mod synth;

pub use cache::{read_dataset, write_dataset, CACHE_MAGIC, CACHE_VERSION};
pub use idx::{idx_dataset, load_idx, parse_idx_images, parse_idx_labels, IdxImages, IdxOptions, IMAGES_MAGIC, LABELS_MAGIC};
pub use labeled::sample_labeled_subset;
pub use synth::{synth_mixture, SynthKind, BAR_WIDTH, FLIP_PROB, GLYPH_WIDTH, STRIP_WIDTH};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub name: String,
    /// Closed interval holding every feature value.
    pub range: (f64, f64),
    pub seed: Option<u64>,
}

/// `N × d` samples with optional ground truth in `[0, classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Option<Vec<usize>>,
    classes: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Option<Vec<usize>>, classes: usize, meta: DatasetMeta) -> Result<Self> {
        let (n, _) = features
            .dims2()
            .ok_or_else(|| Error::Dataset(format!("features must be N x d, got {:?}", features.shape())))?;
        let (lo, hi) = meta.range;
        if let Some(v) = features.data().iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::Dataset(format!("value {v} outside the declared range [{lo}, {hi}]")));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Dataset(format!("{} labels for {n} samples", l.len())));
            }
            if let Some(bad) = l.iter().find(|&&c| c >= classes) {
                return Err(Error::Dataset(format!("label {bad} outside [0, {classes})")));
            }
        }
        Ok(Self {
            features,
            labels,
            classes,
            meta,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}
