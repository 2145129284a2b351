//! Datasets: the synthetic quadrant task and the IDX file format.

mod idx;
mod quadrant;

pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels,
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use quadrant::{gen_quadrant, gen_quadrant_placed, Glyph, Placement, QuadrantSpec};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Images `[B,H,W,1]` in `[0,1]` with one integer label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LabeledBatch<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if images.dims().batch != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.dims().batch,
                labels.len()
            )));
        }
        Ok(LabeledBatch { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Every label must be a valid class index for an `M`-way model.
    pub fn validate_labels(&self, categories: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l >= categories) {
            Some(k) => Err(Error::Range(format!(
                "label {} of sample {k} outside 0..{categories}",
                self.labels[k]
            ))),
            None => Ok(()),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(LabeledBatch {
            images: self.images.select_batch(indices)?,
            labels: indices.iter().map(|&k| self.labels[k]).collect(),
        })
    }

    pub fn class_histogram(&self, categories: usize) -> Vec<usize> {
        let mut h = vec![0; categories];
        for &l in &self.labels {
            if l < categories {
                h[l] += 1;
            }
        }
        h
    }
}
