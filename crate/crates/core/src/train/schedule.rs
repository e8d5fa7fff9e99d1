//! Linear warmup followed by a cosine decay, then a constant floor.

use std::f64::consts::PI;

/// Learning rate at a (fractional) epoch. Past `total_epochs` the rate stays at `min_lr`.
pub fn lr_at(epoch_frac: f64, base_lr: f64, warmup_epochs: f64, total_epochs: f64, min_lr: f64) -> f64 {
    if warmup_epochs > 0.0 && epoch_frac < warmup_epochs {
        return base_lr * (epoch_frac / warmup_epochs).max(0.0);
    }
    let span = total_epochs - warmup_epochs;
    if span <= 0.0 || epoch_frac >= total_epochs {
        return if epoch_frac >= total_epochs { min_lr } else { base_lr };
    }
    let progress = (epoch_frac - warmup_epochs) / span;
    min_lr + 0.5 * (base_lr - min_lr) * (1.0 + (PI * progress).cos())
}
