//! Datasets: CIFAR-10 binary batches, a synthetic quadrant task, and the
//! batch augmentations used during training.

pub mod augment;
pub mod cifar;
pub mod synthetic;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub use augment::{mixup, mixup_with, one_hot, AugmentConfig, Augmenter};
pub use cifar::{load_cifar10, read_cifar_batch, ChannelStats, CIFAR_CLASSES, CIFAR_RECORD_BYTES};
pub use synthetic::synthetic_quadrant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images `[M, C, H, W]` in `f32` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        images: Vec<f32>,
        labels: Vec<usize>,
        (channels, height, width): (usize, usize, usize),
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let per = channels * height * width;
        if per == 0 || images.len() != labels.len() * per {
            return Err(Error::InvalidShape {
                op: "dataset",
                msg: format!(
                    "{} pixel values do not form {} images of {channels}x{height}x{width}",
                    images.len(),
                    labels.len()
                ),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::BadTarget {
                target: bad,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            images,
            labels,
            channels,
            height,
            width,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Gathers the listed samples into a `[B, C, H, W]` tensor.
    pub fn batch<T: Element>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| T::lit(v as f64)));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let shape = [indices.len(), self.channels, self.height, self.width];
        (Tensor::new(shape, data).expect("batch shape"), labels)
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        let n = n.min(self.len());
        self.images.truncate(n * self.image_len());
        self.labels.truncate(n);
    }
}
