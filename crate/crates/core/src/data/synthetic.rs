//! Four-class task whose label is the quadrant holding a bright blob.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Split};
use crate::error::{Error, Result};

const NOISE_STD: f32 = 0.25;
const BLOB_PEAK: f32 = 1.5;

/// `n` RGB images of `size x size`. Quadrants are numbered row-major:
/// 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
pub fn synthetic_quadrant(n: usize, size: usize, seed: u64, split: Split) -> Result<Dataset> {
    if size < 4 || !size.is_multiple_of(2) {
        return Err(Error::Config(format!("synthetic image size must be even and >= 4, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, NOISE_STD).expect("valid std");
    let half = size as f32 / 2.0;
    let sigma = size as f32 / 10.0;
    let mut images = Vec::with_capacity(n * 3 * size * size);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let q = rng.random_range(0..4usize);
        let (qy, qx) = ((q / 2) as f32 * half, (q % 2) as f32 * half);
        let margin = half / 4.0;
        let cy = qy + rng.random_range(margin..half - margin);
        let cx = qx + rng.random_range(margin..half - margin);
        let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.6f32..1.0));
        for &t in &tint {
            for y in 0..size {
                for x in 0..size {
                    let (dy, dx) = (y as f32 + 0.5 - cy, x as f32 + 0.5 - cx);
                    let blob = BLOB_PEAK * t * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
                    images.push(blob + noise.sample(&mut rng));
                }
            }
        }
        labels.push(q);
    }
    Dataset::new(images, labels, (3, size, size), 4, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadrant_sums(img: &[f32], size: usize) -> [f32; 4] {
        let mut s = [0.0; 4];
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    let q = (y >= size / 2) as usize * 2 + (x >= size / 2) as usize;
                    s[q] += img[(c * size + y) * size + x];
                }
            }
        }
        s
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synthetic_quadrant(20, 16, 3, Split::Train).unwrap();
        assert_eq!(a, synthetic_quadrant(20, 16, 3, Split::Train).unwrap());
        assert_ne!(a.images, synthetic_quadrant(20, 16, 4, Split::Train).unwrap().images);
    }

    #[test]
    fn brightest_quadrant_is_the_label() {
        let d = synthetic_quadrant(2000, 32, 7, Split::Train).unwrap();
        let correct = (0..d.len())
            .filter(|&i| {
                let s = quadrant_sums(d.image(i), 32);
                let best = (0..4).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
                best == d.labels[i]
            })
            .count();
        assert!(correct as f64 / d.len() as f64 >= 0.99, "{correct}");
        let mut counts = [0usize; 4];
        d.labels.iter().for_each(|&l| counts[l] += 1);
        assert!(counts.iter().all(|&c| c > 400));
    }

    #[test]
    fn rejects_odd_size() {
        assert!(synthetic_quadrant(1, 15, 0, Split::Train).is_err());
    }
}
