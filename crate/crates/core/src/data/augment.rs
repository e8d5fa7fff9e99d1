//! Batch augmentations: horizontal flip, pad-and-crop, mixup.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub mixup_prob: f64,
    pub mixup_alpha: f64,
    pub flip: bool,
    pub crop_pad: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            mixup_prob: 0.8,
            mixup_alpha: 0.8,
            flip: true,
            crop_pad: 4,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Leaves every batch untouched.
    pub fn none() -> Self {
        AugmentConfig {
            mixup_prob: 0.0,
            mixup_alpha: 1.0,
            flip: false,
            crop_pad: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mixup_prob) {
            return Err(Error::Config(format!("augment.mixup_prob {} is outside [0, 1]", self.mixup_prob)));
        }
        if !(self.mixup_alpha > 0.0) || !self.mixup_alpha.is_finite() {
            return Err(Error::Config(format!("augment.mixup_alpha {} must be positive", self.mixup_alpha)));
        }
        Ok(())
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Vec<f32> {
    let mut y = vec![0.0; labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        y[r * classes + l] = 1.0;
    }
    y
}

/// `x <- lambda x + (1 - lambda) x[perm]`, and the same for label rows.
pub fn mixup_with(x: &mut [f32], y: &mut [f32], batch: usize, lambda: f32, perm: &[usize]) {
    if batch == 0 {
        return;
    }
    let (xs, ys) = (x.len() / batch, y.len() / batch);
    let (x0, y0) = (x.to_vec(), y.to_vec());
    for (r, &p) in perm.iter().enumerate() {
        for i in 0..xs {
            x[r * xs + i] = lambda * x0[r * xs + i] + (1.0 - lambda) * x0[p * xs + i];
        }
        for i in 0..ys {
            y[r * ys + i] = lambda * y0[r * ys + i] + (1.0 - lambda) * y0[p * ys + i];
        }
    }
}

/// With probability `prob`, mixes the batch with a shuffled copy of itself
/// using `lambda ~ Beta(alpha, alpha)`. Returns the lambda used, if any.
pub fn mixup(x: &mut [f32], y: &mut [f32], batch: usize, alpha: f64, prob: f64, rng: &mut ChaCha8Rng) -> Option<f32> {
    if batch < 2 || !rng.random_bool(prob.clamp(0.0, 1.0)) {
        return None;
    }
    let lambda = Beta::new(alpha, alpha).expect("positive alpha").sample(rng) as f32;
    let mut perm: Vec<usize> = (0..batch).collect();
    perm.shuffle(rng);
    mixup_with(x, y, batch, lambda, &perm);
    Some(lambda)
}

fn flip_horizontal(img: &mut [f32], channels: usize, h: usize, w: usize) {
    for c in 0..channels {
        for y in 0..h {
            img[(c * h + y) * w..(c * h + y + 1) * w].reverse();
        }
    }
}

/// Zero-pads by `pad` and crops back to `h x w` at offset `(dy, dx)` in `[0, 2 pad]`.
fn shift_crop(img: &mut [f32], channels: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize) {
    let src = img.to_vec();
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = ((y + dy) as isize - pad as isize, (x + dx) as isize - pad as isize);
                img[(c * h + y) * w + x] = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                    src[(c * h + sy as usize) * w + sx as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

/// Seeded augmentation stream; the same seed yields the same sequence of batches.
#[derive(Clone, Debug)]
pub struct Augmenter {
    pub config: AugmentConfig,
    rng: ChaCha8Rng,
}

impl Augmenter {
    pub fn new(config: AugmentConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Augmenter { config, rng })
    }

    /// Augments a `[B, C, H, W]` batch in place and returns soft targets `[B, classes]`.
    pub fn apply(&mut self, images: &mut [f32], shape: [usize; 4], labels: &[usize], classes: usize) -> Vec<f32> {
        let [b, c, h, w] = shape;
        let per = c * h * w;
        for img in images.chunks_exact_mut(per).take(b) {
            if self.config.flip && self.rng.random_bool(0.5) {
                flip_horizontal(img, c, h, w);
            }
            let pad = self.config.crop_pad;
            if pad > 0 {
                let dy = self.rng.random_range(0..=2 * pad);
                let dx = self.rng.random_range(0..=2 * pad);
                shift_crop(img, c, h, w, pad, dy, dx);
            }
        }
        let mut y = one_hot(labels, classes);
        if self.config.mixup_prob > 0.0 {
            mixup(images, &mut y, b, self.config.mixup_alpha, self.config.mixup_prob, &mut self.rng);
        }
        y
    }
}
