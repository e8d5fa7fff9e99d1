//! Training: optimizer, schedule, loss, the epoch driver and its telemetry.

pub mod loss;
pub mod optim;
pub mod plot;
pub mod schedule;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::checkpoint::save_checkpoint;
use crate::data::{AugmentConfig, Augmenter, Dataset};
use crate::error::{Error, Result};
use crate::model::{LayerStats, Model};
use crate::tensor::{Element, Tensor};

pub use loss::{ce_label_smoothing, smooth_targets, soft_ce_label_smoothing, topk_correct};
pub use optim::AdamW;
pub use schedule::lr_at;

pub const METRICS_HEADER: &str = "epoch,layer,avg_neighbors,tau,train_loss,test_top1";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: f64,
    /// Final epochs held at `min_lr` after the cosine decay.
    pub cooldown_epochs: f64,
    /// `min_lr = base_lr * min_lr_ratio`.
    pub min_lr_ratio: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    pub eval_batch_size: usize,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            base_lr: 2e-3,
            warmup_epochs: 3.0,
            cooldown_epochs: 3.0,
            min_lr_ratio: 1e-2,
            weight_decay: 0.05,
            label_smoothing: 0.1,
            seed: 0,
            eval_batch_size: 256,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.eval_batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 2".into()));
        }
        if !(self.base_lr > 0.0) || self.warmup_epochs < 0.0 || self.cooldown_epochs < 0.0 {
            return Err(Error::Config("learning rate must be positive and epoch counts non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "train.label_smoothing {} is outside [0, 1)",
                self.label_smoothing
            )));
        }
        self.augment.validate()
    }

    pub fn min_lr(&self) -> f64 {
        self.base_lr * self.min_lr_ratio
    }

    /// Learning rate used for step `step` (0-based) of `steps` in `epoch`.
    pub fn lr_for_step(&self, epoch: usize, step: usize, steps: usize) -> f64 {
        let frac = epoch as f64 + (step + 1) as f64 / steps.max(1) as f64;
        let decay_end = (self.epochs as f64 - self.cooldown_epochs).max(self.warmup_epochs);
        lr_at(frac, self.base_lr, self.warmup_epochs, decay_end, self.min_lr())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub top1: f64,
    /// Only defined with at least five classes.
    pub top5: Option<f64>,
    pub loss: f64,
}

/// Eval-mode accuracy and plain cross-entropy over a whole split.
pub fn evaluate<T: Element>(model: &Model<T>, data: &Dataset, batch_size: usize) -> Result<EvalReport> {
    let classes = model.config.num_classes;
    loss::check_targets(&data.labels, classes)?;
    let (mut top1, mut top5, mut loss_sum) = (0usize, 0usize, 0.0f64);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch::<T>(chunk);
        let mut g = Graph::new(&model.store);
        let xv = g.input(x);
        let out = model.params.forward(&mut g, xv, false)?;
        let l = ce_label_smoothing(&mut g, out.logits, &labels, 0.0)?;
        loss_sum += g.item(l).as_f64() * chunk.len() as f64;
        let logits = g.value(out.logits);
        top1 += topk_correct(logits, classes, &labels, 1);
        top5 += topk_correct(logits, classes, &labels, 5);
    }
    let n = data.len().max(1) as f64;
    Ok(EvalReport {
        top1: top1 as f64 / n,
        top5: (classes >= 5).then(|| top5 as f64 / n),
        loss: loss_sum / n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub test: EvalReport,
    /// `avg_neighbors` is the mean over the epoch's training steps; `tau` is
    /// the value at the end of the epoch.
    pub layers: Vec<LayerStats>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Graph statistics of the very first training step.
    pub initial: Vec<LayerStats>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// One row per (epoch, layer), six decimals, LF line endings.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for e in &self.epochs {
            for l in &e.layers {
                let _ = writeln!(
                    s,
                    "{},{},{:.6},{:.6},{:.6},{:.6}",
                    e.epoch, l.layer, l.avg_neighbors, l.tau, e.train_loss, e.test.top1
                );
            }
        }
        s
    }

    /// `(epoch, avg_neighbors)` for one layer; the first-step value is plotted at epoch 0.
    pub fn neighbor_curve(&self, layer: usize) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self
            .initial
            .get(layer)
            .map(|s| (0.0, s.avg_neighbors))
            .into_iter()
            .collect();
        pts.extend(
            self.epochs
                .iter()
                .filter_map(|e| e.layers.get(layer).map(|s| (e.epoch as f64 + 1.0, s.avg_neighbors))),
        );
        pts
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the metrics CSV and one SVG per layer into `dir`.
pub fn write_artifacts(report: &TrainReport, num_nodes: usize, dir: &Path) -> Result<()> {
    write_file(&dir.join(METRICS_FILE), &report.metrics_csv())?;
    for layer in 0..report.initial.len() {
        let svg = plot::neighbors_svg(
            &format!("layer {layer}: average neighbors per node"),
            &report.neighbor_curve(layer),
            num_nodes as f64,
        );
        write_file(&dir.join(format!("avg_neighbors_layer{layer}.svg")), &svg)?;
    }
    Ok(())
}

struct StepOutcome<T> {
    loss: f64,
    stats: Vec<LayerStats>,
    grads: Vec<(crate::params::ParamId, Vec<T>)>,
    buffers: Vec<(crate::params::ParamId, Vec<T>)>,
}

fn forward_backward<T: Element>(
    model: &Model<T>,
    x: &Tensor<T>,
    soft: &[f32],
    eps: f64,
    checked: bool,
) -> Result<StepOutcome<T>> {
    let mut g = Graph::new(&model.store);
    g.set_checked(checked);
    let xv = g.input(x.clone());
    let out = model.params.forward(&mut g, xv, true)?;
    let l = soft_ce_label_smoothing(&mut g, out.logits, soft, eps)?;
    let loss = g.item(l).as_f64();
    let stats = model.params.layer_stats(&g, &out)?;
    if !loss.is_finite() {
        return Ok(StepOutcome {
            loss,
            stats,
            grads: Vec::new(),
            buffers: Vec::new(),
        });
    }
    g.backward(l)?;
    let buffers = g.take_buffer_updates();
    Ok(StepOutcome {
        loss,
        stats,
        grads: g.into_param_grads(),
        buffers,
    })
}

/// Runs the full schedule. With `out_dir`, rewrites the metrics CSV and the
/// checkpoint after every epoch and the per-layer plots at the end.
/// `on_epoch` sees each finished epoch (for progress output).
pub fn train_loop<T: Element>(
    model: &mut Model<T>,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    let classes = model.config.num_classes;
    loss::check_targets(&train.labels, classes)?;
    loss::check_targets(&test.labels, classes)?;
    if train.len() < 2 {
        return Err(Error::Config("training split needs at least two samples".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut augmenter = Augmenter::new(AugmentConfig {
        seed: cfg.augment.seed.wrapping_add(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        ..cfg.augment.clone()
    })?;
    let mut opt = AdamW::<T>::new(cfg.base_lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    // a trailing batch of one sample cannot be batch-normalized; fold it away
    let batches = |order: &[usize]| -> Vec<Vec<usize>> {
        let mut b: Vec<Vec<usize>> = order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
        if b.len() > 1 && b.last().is_some_and(|l| l.len() < 2) {
            let last = b.pop().unwrap();
            b.last_mut().unwrap().extend(last);
        }
        b
    };
    let steps = batches(&order).len();
    let layers = model.params.blocks.len();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut neighbor_sum = vec![0.0; layers];
        let mut lr = 0.0;
        for (step, idx) in batches(&order).iter().enumerate() {
            lr = cfg.lr_for_step(epoch, step, steps);
            let (mut x, labels) = train.batch::<f32>(idx);
            let shape = [idx.len(), train.channels, train.height, train.width];
            let soft = augmenter.apply(x.data_mut(), shape, &labels, classes);
            let x = x.cast::<T>();
            let outcome = forward_backward(model, &x, &soft, cfg.label_smoothing, false)?;
            if !outcome.loss.is_finite() {
                let location = match forward_backward(model, &x, &soft, cfg.label_smoothing, true) {
                    Err(Error::NonFinite { op, scope }) if scope.is_empty() => op.to_string(),
                    Err(Error::NonFinite { op, scope }) => format!("{op} in {scope}"),
                    _ => "loss".to_string(),
                };
                return Err(Error::Diverged {
                    epoch,
                    step,
                    lr,
                    loss: outcome.loss,
                    location,
                });
            }
            if epoch == 0 && step == 0 {
                report.initial = outcome.stats.clone();
            }
            loss_sum += outcome.loss;
            for s in &outcome.stats {
                neighbor_sum[s.layer] += s.avg_neighbors;
            }
            opt.lr = lr;
            opt.step(&mut model.store, &outcome.grads)?;
            for (id, v) in outcome.buffers {
                model.store.assign(id, v)?;
            }
        }
        let test_report = evaluate(model, test, cfg.eval_batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / steps as f64,
            lr,
            test: test_report,
            layers: model
                .params
                .blocks
                .iter()
                .enumerate()
                .map(|(layer, b)| LayerStats {
                    layer,
                    avg_neighbors: neighbor_sum[layer] / steps as f64,
                    tau: b.grapher.lrgc.tau_value(&model.store),
                })
                .collect(),
        };
        on_epoch(&record);
        report.epochs.push(record);
        if let Some(dir) = out_dir {
            write_file(&dir.join(METRICS_FILE), &report.metrics_csv())?;
            save_checkpoint(model, dir.join(CHECKPOINT_FILE))?;
        }
    }
    if let Some(dir) = out_dir {
        write_artifacts(&report, model.params.num_nodes, dir)?;
    }
    Ok(report)
}
