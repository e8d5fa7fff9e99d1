//! Whole-model gradient verification in 64-bit.
//!
//! The model is re-drawn at a scale where every branch carries signal:
//! fan-in scaled uniform weights, thresholds near zero so that both pruned
//! and selected edges occur, and batch norm in eval mode with non-trivial
//! running statistics. Training-mode batch norm couples the batch and makes
//! the check needlessly ill-conditioned, so it is not used here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check, FdOptions, FdReport, Fault, Stencil};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::Tensor;
use crate::train::loss::ce_label_smoothing;

/// Pass threshold on the maximum relative error.
pub const GRAD_CHECK_TOL: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub batch: usize,
    /// Coordinates sampled per parameter tensor; `None` checks all of them.
    pub coords_per_param: Option<usize>,
    pub fd: FdOptions,
}

impl GradCheckConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        GradCheckConfig {
            model,
            seed,
            batch: 2,
            coords_per_param: Some(32),
            fd: FdOptions {
                step: 2e-4,
                kink_radius: 4e-4,
                zero_tol: 1e-9,
                max_coords_per_param: None,
                seed,
                stencil: Stencil::FivePoint,
                fault: None,
            },
        }
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fd.fault = fault;
        self
    }
}

fn fan_in(name: &str, shape: &[usize]) -> usize {
    match shape.len() {
        2 if name != "pos_embed" => shape[0],
        3 => shape[1],
        4 => shape[1] * shape[2] * shape[3],
        _ => 1,
    }
}

/// Overwrites every tensor of `store` with values suited to a gradient check.
pub fn randomize_for_check(store: &mut ParamStore<f64>, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c4ec);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let p = store.get(id);
        let (name, kind, n) = (p.name.clone(), p.kind, p.tensor.numel());
        let shape = p.tensor.shape().to_vec();
        let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
        let values = if name.ends_with("running_var") || name.ends_with("gamma") {
            draw(0.6, 1.4)
        } else if name.ends_with("running_mean") {
            draw(-0.2, 0.2)
        } else if name.ends_with("tau") {
            draw(-0.3, 0.3)
        } else if kind == ParamKind::Weight || name == "pos_embed" {
            let a = (3.0 / fan_in(&name, &shape) as f64).sqrt();
            draw(-a, a)
        } else {
            draw(-0.2, 0.2)
        };
        store.assign(id, values)?;
    }
    Ok(())
}

/// Central-difference check of every trainable parameter group, each tau included.
pub fn model_grad_check(cfg: &GradCheckConfig) -> Result<FdReport> {
    let mut model = Model::<f64>::new(cfg.model.clone(), cfg.seed)?;
    randomize_for_check(&mut model.store, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let c = &cfg.model;
    let images = Tensor::from_fn([cfg.batch, c.in_channels, c.height, c.width], |_| rng.random_range(-1.0..1.0));
    let targets: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..c.num_classes)).collect();
    let ids = model.store.trainable_ids();
    let params = model.params.clone();
    let opts = FdOptions {
        max_coords_per_param: cfg.coords_per_param,
        ..cfg.fd.clone()
    };
    finite_diff_check(
        &mut model.store,
        &ids,
        |g| {
            let x = g.input(images.clone());
            let out = params.forward(g, x, false)?;
            ce_label_smoothing(g, out.logits, &targets, 0.1)
        },
        &opts,
    )
}
