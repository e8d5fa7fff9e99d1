//! CIFAR-10 binary format: 3073-byte records of one label byte followed by
//! the red, green and blue 32x32 planes in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_CLASSES: usize = 10;
const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Raw pixel bytes and labels of one batch file.
pub fn read_cifar_batch(path: &Path) -> Result<(Vec<u8>, Vec<usize>)> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => return Err(Error::io(path, e)),
    };
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::RecordCount {
            path: path.to_path_buf(),
            bytes: bytes.len(),
            record: CIFAR_RECORD_BYTES,
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * 3 * PLANE);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CIFAR_CLASSES {
            return Err(Error::BadLabel {
                path: path.to_path_buf(),
                record: i,
                label: rec[0],
                num_classes: CIFAR_CLASSES,
            });
        }
        labels.push(rec[0] as usize);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((pixels, labels))
}

/// Per-channel mean and standard deviation of `[0, 1]`-scaled pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    pub fn from_pixels(pixels: &[u8]) -> Self {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let images = pixels.len() / (3 * PLANE);
        for img in pixels.chunks_exact(3 * PLANE) {
            for c in 0..3 {
                for &p in &img[c * PLANE..(c + 1) * PLANE] {
                    let v = p as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let count = (images * PLANE).max(1) as f64;
        let mean = sum.map(|s| s / count);
        let std = std::array::from_fn(|c| (sq[c] / count - mean[c] * mean[c]).max(0.0).sqrt().max(1e-8));
        ChannelStats { mean, std }
    }

    pub fn normalize(&self, pixels: &[u8]) -> Vec<f32> {
        let mut out = Vec::with_capacity(pixels.len());
        for img in pixels.chunks_exact(3 * PLANE) {
            for c in 0..3 {
                out.extend(
                    img[c * PLANE..(c + 1) * PLANE]
                        .iter()
                        .map(|&p| ((p as f64 / 255.0 - self.mean[c]) / self.std[c]) as f32),
                );
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Cifar10 {
    pub train: Dataset,
    pub test: Dataset,
    /// Computed from the training split and applied to both splits.
    pub stats: ChannelStats,
}

fn read_all(dir: &Path, files: &[&str]) -> Result<(Vec<u8>, Vec<usize>)> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let path: PathBuf = dir.join(f);
        let (p, l) = read_cifar_batch(&path)?;
        pixels.extend(p);
        labels.extend(l);
    }
    Ok((pixels, labels))
}

pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<Cifar10> {
    let dir = dir.as_ref();
    let (train_px, train_labels) = read_all(dir, &TRAIN_FILES)?;
    let (test_px, test_labels) = read_all(dir, &[TEST_FILE])?;
    let stats = ChannelStats::from_pixels(&train_px);
    let shape = (3, SIDE, SIDE);
    Ok(Cifar10 {
        train: Dataset::new(stats.normalize(&train_px), train_labels, shape, CIFAR_CLASSES, Split::Train)?,
        test: Dataset::new(stats.normalize(&test_px), test_labels, shape, CIFAR_CLASSES, Split::Test)?,
        stats,
    })
}
