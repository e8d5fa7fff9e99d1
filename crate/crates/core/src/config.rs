//! Flat `section.key = value` run configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Assignments are
//! applied in order. `data.source` resets everything to that source's
//! defaults and `model.preset` resets the model section, so both belong at
//! the top. The manifest written next to every run lists every key with its
//! resolved value and parses back to the same configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{load_cifar10, synthetic_quadrant, AugmentConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

pub const MANIFEST_FILE: &str = "manifest.cfg";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory of the CIFAR-10 binary batches.
    pub dir: Option<PathBuf>,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

const TRAIN_KEYS: [&str; 10] = [
    "epochs",
    "batch_size",
    "base_lr",
    "warmup_epochs",
    "cooldown_epochs",
    "min_lr_ratio",
    "weight_decay",
    "label_smoothing",
    "seed",
    "eval_batch_size",
];
const AUGMENT_KEYS: [&str; 5] = ["mixup_prob", "mixup_alpha", "flip", "crop_pad", "seed"];
const DATA_KEYS: [&str; 5] = ["source", "dir", "train_size", "test_size", "seed"];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

impl RunConfig {
    /// Desk model on the four-class quadrant task. Flips and shifts are off
    /// because they move the blob into another quadrant and corrupt the label;
    /// mixup is off because the task is already easy and noise-free.
    pub fn synthetic() -> Self {
        let mut model = ModelConfig::desk();
        model.num_classes = 4;
        RunConfig {
            model,
            train: TrainConfig {
                augment: AugmentConfig::none(),
                ..TrainConfig::default()
            },
            data: DataConfig {
                source: DataSource::Synthetic,
                dir: None,
                train_size: 4096,
                test_size: 512,
                seed: 1,
            },
        }
    }

    pub fn cifar10(dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            data: DataConfig {
                source: DataSource::Cifar10,
                dir: Some(dir.into()),
                train_size: 0,
                test_size: 0,
                seed: 0,
            },
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let (section, field) = key
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("key `{key}` needs a section prefix (model., train., augment., data.)")))?;
        let t = &mut self.train;
        let a = &mut t.augment;
        let d = &mut self.data;
        match (section, field) {
            ("model", "preset") => {
                let classes = self.model.num_classes;
                self.model = ModelConfig::preset(value)?;
                if d.source == DataSource::Synthetic {
                    self.model.num_classes = classes;
                }
            }
            ("model", f) => self.model.set(f, value)?,
            ("train", "epochs") => t.epochs = parse(key, value)?,
            ("train", "batch_size") => t.batch_size = parse(key, value)?,
            ("train", "base_lr") => t.base_lr = parse(key, value)?,
            ("train", "warmup_epochs") => t.warmup_epochs = parse(key, value)?,
            ("train", "cooldown_epochs") => t.cooldown_epochs = parse(key, value)?,
            ("train", "min_lr_ratio") => t.min_lr_ratio = parse(key, value)?,
            ("train", "weight_decay") => t.weight_decay = parse(key, value)?,
            ("train", "label_smoothing") => t.label_smoothing = parse(key, value)?,
            ("train", "seed") => t.seed = parse(key, value)?,
            ("train", "eval_batch_size") => t.eval_batch_size = parse(key, value)?,
            ("augment", "mixup_prob") => a.mixup_prob = parse(key, value)?,
            ("augment", "mixup_alpha") => a.mixup_alpha = parse(key, value)?,
            ("augment", "flip") => a.flip = parse(key, value)?,
            ("augment", "crop_pad") => a.crop_pad = parse(key, value)?,
            ("augment", "seed") => a.seed = parse(key, value)?,
            ("data", "source") => {
                *self = match value {
                    "synthetic" => RunConfig::synthetic(),
                    "cifar10" => RunConfig::cifar10(d.dir.clone().unwrap_or_default()),
                    other => return Err(Error::Config(format!("data.source `{other}` (expected synthetic or cifar10)"))),
                };
                if self.data.dir.as_deref() == Some(Path::new("")) {
                    self.data.dir = None;
                }
            }
            ("data", "dir") => d.dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            ("data", "train_size") => d.train_size = parse(key, value)?,
            ("data", "test_size") => d.test_size = parse(key, value)?,
            ("data", "seed") => d.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` assignments, one per line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{line}`", n + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.to_path_buf())),
            Err(e) => return Err(Error::io(path, e)),
        };
        self.apply_text(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Reads a file on top of the synthetic defaults (or those of its `data.source`).
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::synthetic();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        match self.data.source {
            DataSource::Synthetic => {
                if self.model.num_classes != 4 || self.model.in_channels != 3 {
                    return Err(Error::Config(
                        "the synthetic task has 4 classes and 3 channels (model.num_classes, model.in_channels)".into(),
                    ));
                }
                if self.model.height != self.model.width {
                    return Err(Error::Config("the synthetic task needs square images".into()));
                }
                if self.data.train_size < 2 || self.data.test_size == 0 {
                    return Err(Error::Config("data.train_size must be >= 2 and data.test_size >= 1".into()));
                }
            }
            DataSource::Cifar10 => {
                if self.data.dir.is_none() {
                    return Err(Error::Config("data.source = cifar10 needs data.dir".into()));
                }
                let m = &self.model;
                if (m.height, m.width, m.in_channels, m.num_classes) != (32, 32, 3, 10) {
                    return Err(Error::Config("CIFAR-10 needs a 32x32x3 input and 10 classes".into()));
                }
            }
        }
        Ok(())
    }

    /// Every key with its resolved value.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        let t = &self.train;
        let a = &t.augment;
        let d = &self.data;
        let source = match d.source {
            DataSource::Synthetic => "synthetic",
            DataSource::Cifar10 => "cifar10",
        };
        // data.source first so that re-reading starts from the right defaults
        let _ = writeln!(s, "data.source = {source}");
        for k in ModelConfig::KEYS {
            let _ = writeln!(s, "model.{k} = {}", self.model.get(k).unwrap_or_default());
        }
        let train_values: [String; 10] = [
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.base_lr.to_string(),
            t.warmup_epochs.to_string(),
            t.cooldown_epochs.to_string(),
            t.min_lr_ratio.to_string(),
            t.weight_decay.to_string(),
            t.label_smoothing.to_string(),
            t.seed.to_string(),
            t.eval_batch_size.to_string(),
        ];
        for (k, v) in TRAIN_KEYS.iter().zip(train_values) {
            let _ = writeln!(s, "train.{k} = {v}");
        }
        let augment_values = [
            a.mixup_prob.to_string(),
            a.mixup_alpha.to_string(),
            a.flip.to_string(),
            a.crop_pad.to_string(),
            a.seed.to_string(),
        ];
        for (k, v) in AUGMENT_KEYS.iter().zip(augment_values) {
            let _ = writeln!(s, "augment.{k} = {v}");
        }
        let dir = d.dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let data_values = [
            source.to_string(),
            dir,
            d.train_size.to_string(),
            d.test_size.to_string(),
            d.seed.to_string(),
        ];
        for (k, v) in DATA_KEYS.iter().zip(data_values).skip(1) {
            let _ = writeln!(s, "data.{k} = {v}");
        }
        s
    }

    pub fn write_manifest(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_manifest()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Train and test splits described by the data section.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                let size = self.model.height;
                Ok((
                    synthetic_quadrant(d.train_size, size, d.seed, Split::Train)?,
                    synthetic_quadrant(d.test_size, size, d.seed.wrapping_add(1), Split::Test)?,
                ))
            }
            DataSource::Cifar10 => {
                let dir = d
                    .dir
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.source = cifar10 needs data.dir".into()))?;
                let mut c = load_cifar10(dir)?;
                if d.train_size > 0 {
                    c.train.truncate(d.train_size);
                }
                if d.test_size > 0 {
                    c.test.truncate(d.test_size);
                }
                Ok((c.train, c.test))
            }
        }
    }
}
