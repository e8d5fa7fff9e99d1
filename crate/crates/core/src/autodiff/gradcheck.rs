//! Central-difference gradient verification.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Fault, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct FdOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates whose activation pattern changes within this distance are
    /// treated as sitting on a ReLU or max kink and reported instead of checked.
    pub kink_radius: f64,
    /// When both gradients are below this magnitude the coordinate counts as
    /// zero-gradient and the absolute difference is reported instead, since
    /// differences of that size are rounding noise.
    pub zero_tol: f64,
    /// Check at most this many coordinates per parameter (seeded sample).
    /// `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    pub stencil: Stencil,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-5,
            kink_radius: 1e-4,
            zero_tol: 1e-9,
            max_coords_per_param: None,
            seed: 0,
            stencil: Stencil::Central,
            fault: None,
        }
    }
}

/// Difference formula used for the numeric derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h^2).
    Central,
    /// `(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h`, error O(h^4). Allows a
    /// larger step, which keeps roundoff small for tiny gradients.
    FivePoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KinkCoordinate {
    pub param: String,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub excluded: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub groups: Vec<GroupReport>,
    pub kinks: Vec<KinkCoordinate>,
}

impl FdReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GroupReport> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

struct Eval {
    value: f64,
    signature: u64,
}

fn evaluate<F>(store: &ParamStore<f64>, f: &mut F, fault: Option<Fault>) -> Result<Eval>
where
    F: FnMut(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    g.set_track_kinks(true);
    g.inject_fault(fault);
    let loss = f(&mut g)?;
    Ok(Eval {
        value: g.item(loss),
        signature: g.kink_signature(),
    })
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences for every selected coordinate of `params`.
///
/// `f` must build the same function each time it is called; a second
/// evaluation that differs bitwise is reported as [`Error::NonDeterministic`].
pub fn finite_diff_check<F>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    mut f: F,
    opts: &FdOptions,
) -> Result<FdReport>
where
    F: FnMut(&mut Graph<'_, f64>) -> Result<Var>,
{
    let (base, analytic) = {
        let mut g = Graph::new(&*store);
        g.set_track_kinks(true);
        g.inject_fault(opts.fault);
        let loss = f(&mut g)?;
        g.backward(loss)?;
        let grads: HashMap<ParamId, Vec<f64>> = g.param_grads().into_iter().collect();
        (
            Eval {
                value: g.item(loss),
                signature: g.kink_signature(),
            },
            grads,
        )
    };
    let again = evaluate(store, &mut f, opts.fault)?;
    if again.value.to_bits() != base.value.to_bits() {
        return Err(Error::NonDeterministic {
            first: base.value,
            second: again.value,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = FdReport::default();
    for &id in params {
        let name = store.get(id).name.clone();
        let n = store.tensor(id).numel();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => {
                let mut c = rand::seq::index::sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut group = GroupReport {
            name: name.clone(),
            checked: 0,
            excluded: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for idx in coords {
            let orig = store.tensor(id).data()[idx];
            let mut probe = |store: &mut ParamStore<f64>, delta: f64| -> Result<Eval> {
                store.tensor_mut(id).data_mut()[idx] = orig + delta;
                let e = evaluate(store, &mut f, opts.fault);
                store.tensor_mut(id).data_mut()[idx] = orig;
                e
            };
            let h = opts.step;
            let plus = probe(store, h)?;
            let minus = probe(store, -h)?;
            let mut kink = plus.signature != base.signature || minus.signature != base.signature;
            let mut wide = None;
            if !kink && opts.stencil == Stencil::FivePoint {
                let (p2, m2) = (probe(store, 2.0 * h)?, probe(store, -2.0 * h)?);
                kink = p2.signature != base.signature || m2.signature != base.signature;
                wide = Some((p2.value, m2.value));
            }
            let reach = if wide.is_some() { 2.0 * h } else { h };
            if !kink && opts.kink_radius > reach {
                kink = probe(store, opts.kink_radius)?.signature != base.signature
                    || probe(store, -opts.kink_radius)?.signature != base.signature;
            }
            if kink {
                group.excluded += 1;
                report.kinks.push(KinkCoordinate {
                    param: name.clone(),
                    index: idx,
                });
                continue;
            }
            let numeric = match wide {
                Some((p2, m2)) => (m2 - 8.0 * minus.value + 8.0 * plus.value - p2) / (12.0 * h),
                None => (plus.value - minus.value) / (2.0 * h),
            };
            let a = analytic.get(&id).map_or(0.0, |g| g[idx]);
            let err = if a.abs().max(numeric.abs()) < opts.zero_tol {
                (a - numeric).abs()
            } else {
                relative_error(a, numeric)
            };
            group.checked += 1;
            if err > group.max_rel_error || group.checked == 1 {
                group.max_rel_error = group.max_rel_error.max(err);
                if err >= group.max_rel_error {
                    group.worst_index = idx;
                    group.worst_analytic = a;
                    group.worst_numeric = numeric;
                }
            }
        }
        report.groups.push(group);
    }
    Ok(report)
}
