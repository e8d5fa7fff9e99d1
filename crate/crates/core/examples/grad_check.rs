//! Finite-difference check of the full desk model in 64-bit, one line per
//! parameter group.
//!
//! cargo run --release --example grad_check -- [coords_per_param]

use std::time::Instant;

use vig_lrgc::model::ModelConfig;
use vig_lrgc::verify::{model_grad_check, GradCheckConfig, GRAD_CHECK_TOL};

fn main() -> vig_lrgc::Result<()> {
    let coords = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let mut cfg = GradCheckConfig::new(ModelConfig::desk(), 0);
    if coords.is_some() {
        cfg.coords_per_param = coords;
    }
    let start = Instant::now();
    let report = model_grad_check(&cfg)?;
    for g in &report.groups {
        println!(
            "{:<36} checked {:>4}  kinks {:>3}  max rel err {:.2e}  ({:.3e} vs {:.3e})",
            g.name, g.checked, g.excluded, g.max_rel_error, g.worst_analytic, g.worst_numeric
        );
    }
    println!(
        "max {:.2e} (tol {GRAD_CHECK_TOL:.0e}) in {:.1}s",
        report.max_rel_error(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
