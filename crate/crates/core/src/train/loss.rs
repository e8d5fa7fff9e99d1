//! Label-smoothed cross-entropy and top-k accuracy.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

/// `(1 - eps) y + eps / C` for probability rows `y`.
pub fn smooth_targets<T: Element>(soft: &[f32], classes: usize, eps: f64) -> Vec<T> {
    let floor = eps / classes as f64;
    soft.iter().map(|&y| T::lit((1.0 - eps) * y as f64 + floor)).collect()
}

pub fn check_targets(targets: &[usize], classes: usize) -> Result<()> {
    match targets.iter().find(|&&t| t >= classes) {
        Some(&t) => Err(Error::BadTarget { target: t, classes }),
        None => Ok(()),
    }
}

/// Batch-mean cross-entropy against the smoothed one-hot distribution of `targets`.
pub fn ce_label_smoothing<T: Element>(g: &mut Graph<'_, T>, logits: Var, targets: &[usize], eps: f64) -> Result<Var> {
    let classes = *g.shape(logits).last().unwrap_or(&0);
    check_targets(targets, classes)?;
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Config(format!("label smoothing {eps} is outside [0, 1)")));
    }
    let onehot = crate::data::one_hot(targets, classes);
    soft_ce_label_smoothing(g, logits, &onehot, eps)
}

/// Same as [`ce_label_smoothing`] for soft (e.g. mixed) target rows.
pub fn soft_ce_label_smoothing<T: Element>(g: &mut Graph<'_, T>, logits: Var, soft: &[f32], eps: f64) -> Result<Var> {
    let classes = *g.shape(logits).last().unwrap_or(&0);
    let t = smooth_targets::<T>(soft, classes, eps);
    g.soft_cross_entropy(logits, &t)
}

/// Classes of one logit row, best first; ties keep the lower class index first.
fn ranking<T: Element>(row: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx
}

/// Number of rows whose target is among the `k` best-ranked classes.
pub fn topk_correct<T: Element>(logits: &[T], classes: usize, targets: &[usize], k: usize) -> usize {
    logits
        .chunks_exact(classes)
        .zip(targets)
        .filter(|(row, &t)| ranking(row).iter().take(k).any(|&c| c == t))
        .count()
}
