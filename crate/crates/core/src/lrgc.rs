//! Learnable reparameterized graph construction.
//!
//! Every ordered node pair `(i, j)` is a candidate edge from source `i` to
//! target `j`. Its logit is the dot product of the key of `i` and the query
//! of `j`; the learnable per-layer threshold `tau` turns logits into edge
//! weights with
//!
//! ```text
//! score[i][j] = tanh(relu(sigmoid(logit[i][j]) - sigmoid(tau)))
//! ```
//!
//! so an edge is selected (nonzero score) exactly when `logit > tau`, and
//! the threshold itself receives gradients through the surviving edges.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::kernels::sigmoid;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{init_tensor, InitScheme, INIT_STD};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Element, Tensor};

/// Threshold value every layer starts from; low enough that the first
/// optimization step sees a fully connected graph.
pub const TAU_INIT: f64 = -1.0;

/// Key/query projections (no bias) and the layer's scalar threshold.
#[derive(Clone, Debug)]
pub struct LrgcParams {
    pub w_key: ParamId,
    pub w_query: ParamId,
    pub tau: ParamId,
    pub dim: usize,
}

impl LrgcParams {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        tau_init: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let scheme = InitScheme::TruncNormal { std: INIT_STD };
        LrgcParams {
            w_key: store.add(format!("{name}.w_key"), ParamKind::Weight, init_tensor(&[dim, dim], scheme, rng)),
            w_query: store.add(format!("{name}.w_query"), ParamKind::Weight, init_tensor(&[dim, dim], scheme, rng)),
            tau: store.add(format!("{name}.tau"), ParamKind::NoDecay, Tensor::scalar(T::lit(tau_init))),
            dim,
        }
    }

    pub fn tau_value<T: Element>(&self, store: &ParamStore<T>) -> f64 {
        store.tensor(self.tau).item().as_f64()
    }
}

/// Tape handles for one layer's edge logits and scores, `[.., N, N]`,
/// where entry `[i][j]` is the edge from node `i` to node `j`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMatrix {
    pub logits: Var,
    pub scores: Var,
}

/// `K = x W_key`, `Q = x W_query` for `x: [.., N, D]`.
pub fn compute_keys_queries<T: Element>(g: &mut Graph<'_, T>, x: Var, p: &LrgcParams) -> Result<(Var, Var)> {
    let shape = g.shape(x);
    if shape.len() < 2 || shape[shape.len() - 1] != p.dim {
        return Err(Error::ShapeMismatch {
            op: "compute_keys_queries",
            lhs: shape.to_vec(),
            rhs: vec![p.dim, p.dim],
        });
    }
    g.scoped("key_query", |g| {
        let wk = g.param(p.w_key);
        let wq = g.param(p.w_query);
        Ok((g.matmul(x, wk)?, g.matmul(x, wq)?))
    })
}

/// `logits[i][j] = K[i] . Q[j]`; generally asymmetric.
pub fn attention_logits<T: Element>(g: &mut Graph<'_, T>, keys: Var, queries: Var) -> Result<Var> {
    g.scoped("logits", |g| g.matmul_nt(keys, queries))
}

/// `tanh(relu(sigmoid(logits) - sigmoid(tau)))`, with `tau` a rank-0 node.
pub fn soft_threshold<T: Element>(g: &mut Graph<'_, T>, logits: Var, tau: Var) -> Result<Var> {
    if !g.shape(tau).is_empty() {
        return Err(Error::InvalidShape {
            op: "soft_threshold",
            msg: format!("tau must be a scalar, got shape {:?}", g.shape(tau)),
        });
    }
    let s_logit = g.sigmoid(logits)?;
    let s_tau = g.sigmoid(tau)?;
    let diff = g.sub(s_logit, s_tau)?;
    let gated = g.relu(diff)?;
    g.tanh(gated)
}

pub fn lrgc_forward<T: Element>(g: &mut Graph<'_, T>, x: Var, p: &LrgcParams) -> Result<AttentionMatrix> {
    let (k, q) = compute_keys_queries(g, x, p)?;
    let logits = attention_logits(g, k, q)?;
    let tau = g.param(p.tau);
    let scores = soft_threshold(g, logits, tau)?;
    Ok(AttentionMatrix { logits, scores })
}

/// Supremum of any edge score for a given threshold: `tanh(1 - sigmoid(tau))`.
pub fn score_upper_bound(tau: f64) -> f64 {
    (1.0 - sigmoid(tau)).tanh()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeStats {
    /// Mean in-degree over target nodes (and over the batch, if any).
    pub avg_neighbors: f64,
    /// In-degree of each target node, averaged over the batch.
    pub degree_per_node: Vec<f64>,
}

/// Counts selected edges in a score matrix `[N, N]` or batch `[B, N, N]`.
/// Node `j`'s neighbors are the sources `i` (self included) with `score[i][j] > 0`.
pub fn edge_stats<T: Element>(scores: &Tensor<T>) -> Result<EdgeStats> {
    let shape = scores.shape();
    let (batch, n) = match *shape {
        [n, m] if n == m => (1, n),
        [b, n, m] if n == m => (b, n),
        _ => {
            return Err(Error::InvalidShape {
                op: "edge_stats",
                msg: format!("expected a square score matrix, got {shape:?}"),
            })
        }
    };
    let mut degree = vec![0usize; n];
    let data = scores.data();
    for b in 0..batch {
        for i in 0..n {
            let row = &data[(b * n + i) * n..(b * n + i + 1) * n];
            for (j, &s) in row.iter().enumerate() {
                if s > T::zero() {
                    degree[j] += 1;
                }
            }
        }
    }
    let per_node: Vec<f64> = degree.iter().map(|&d| d as f64 / batch.max(1) as f64).collect();
    let avg = if n == 0 {
        0.0
    } else {
        per_node.iter().sum::<f64>() / n as f64
    };
    Ok(EdgeStats {
        avg_neighbors: avg,
        degree_per_node: per_node,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::autodiff::{finite_diff_check, FdOptions};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale))
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Closed form evaluated one edge at a time.
    fn score_oracle(logit: f64, tau: f64) -> f64 {
        (sig(logit) - sig(tau)).max(0.0).tanh()
    }

    fn identity(d: usize) -> Vec<f64> {
        (0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect()
    }

    fn params(store: &mut ParamStore<f64>, d: usize, seed: u64) -> LrgcParams {
        LrgcParams::new(store, "lrgc", d, TAU_INIT, &mut rng(seed))
    }

    #[test]
    fn tau_starts_at_minus_one() {
        let mut store = ParamStore::<f64>::new();
        let p = params(&mut store, 4, 0);
        assert_eq!(p.tau_value(&store), -1.0);
        assert_eq!(store.get(p.tau).kind, ParamKind::NoDecay);
        assert!(store.tensor(p.tau).shape().is_empty());
    }

    #[test]
    fn keys_queries_cases() {
        let mut store = ParamStore::<f64>::new();
        let p = params(&mut store, 3, 0);
        store.assign(p.w_key, identity(3)).unwrap();
        store.assign(p.w_query, identity(3)).unwrap();
        let x = random(&mut rng(1), &[4, 3], 1.0);
        {
            let mut g = Graph::new(&store);
            let xv = g.input(x.clone());
            let (k, q) = compute_keys_queries(&mut g, xv, &p).unwrap();
            assert_eq!(g.value(k), x.data());
            assert_eq!(g.value(q), x.data());
        }
        store.assign(p.w_key, vec![0.0; 9]).unwrap();
        let mut g = Graph::new(&store);
        let xv = g.input(x);
        let (k, _) = compute_keys_queries(&mut g, xv, &p).unwrap();
        assert!(g.value(k).iter().all(|&v| v == 0.0));
        let bad = g.input(Tensor::zeros([4, 2]));
        assert!(compute_keys_queries(&mut g, bad, &p).is_err());
    }

    #[test]
    fn keys_queries_match_per_node_loop() {
        let mut r = rng(2);
        let mut store = ParamStore::<f64>::new();
        let p = params(&mut store, 5, 3);
        let x = random(&mut r, &[6, 5], 1.0);
        let wk = store.tensor(p.w_key).clone();
        let wq = store.tensor(p.w_query).clone();
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let (k, q) = compute_keys_queries(&mut g, xv, &p).unwrap();
        for node in 0..6 {
            for o in 0..5 {
                let (mut ek, mut eq) = (0.0, 0.0);
                for i in 0..5 {
                    ek += x.data()[node * 5 + i] * wk.data()[i * 5 + o];
                    eq += x.data()[node * 5 + i] * wq.data()[i * 5 + o];
                }
                assert!((g.value(k)[node * 5 + o] - ek).abs() < 1e-14);
                assert!((g.value(q)[node * 5 + o] - eq).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn logits_cases() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let onehot = g.input(Tensor::from_f64([3, 3], &identity(3)).unwrap());
        let l = attention_logits(&mut g, onehot, onehot).unwrap();
        assert_eq!(g.value(l), identity(3).as_slice());
        let zero = g.input(Tensor::zeros([3, 3]));
        let l = attention_logits(&mut g, zero, onehot).unwrap();
        assert!(g.value(l).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_match_double_loop() {
        let mut r = rng(4);
        let k = random(&mut r, &[7, 5], 1.0);
        let q = random(&mut r, &[7, 5], 1.0);
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let (kv, qv) = (g.input(k.clone()), g.input(q.clone()));
        let l = attention_logits(&mut g, kv, qv).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let dot: f64 = (0..5).map(|d| k.data()[i * 5 + d] * q.data()[j * 5 + d]).sum();
                assert!((g.value(l)[i * 7 + j] - dot).abs() < 1e-12);
            }
        }
        // orientation: row = source key, column = target query
        assert_ne!(g.value(l)[1], g.value(l)[7]);
    }

    fn threshold_values(logits: &[f64], tau: f64) -> Vec<f64> {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let l = g.input(Tensor::from_f64([logits.len()], logits).unwrap());
        let t = g.input(Tensor::scalar(tau));
        let s = soft_threshold(&mut g, l, t).unwrap();
        g.value(s).to_vec()
    }

    #[test]
    fn soft_threshold_cases() {
        let v = threshold_values(&[-1.0, 0.0, 60.0, -3.0], -1.0);
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 0.2270326).abs() < 1e-7);
        assert!((v[1] - (0.5 - sig(-1.0)).tanh()).abs() < 1e-15);
        assert!((v[2] - 0.6237125).abs() < 1e-7);
        assert!((v[2] - score_upper_bound(-1.0)).abs() < 1e-15);
        assert_eq!(v[3], 0.0);
        assert!((score_upper_bound(-1.0) - (0.7310585786300049f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn soft_threshold_rejects_tensor_tau() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let l = g.input(Tensor::zeros([2, 2]));
        let t = g.input(Tensor::zeros([1]));
        assert!(soft_threshold(&mut g, l, t).is_err());
    }

    #[test]
    fn killed_logits_get_exactly_zero_gradient() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let l = g.leaf(Tensor::from_f64([4], &[-3.0, -1.5, 0.2, 2.0]).unwrap().with_requires_grad(true));
        let t = g.leaf(Tensor::scalar(-1.0).with_requires_grad(true));
        let s = soft_threshold(&mut g, l, t).unwrap();
        let sum = g.sum(s).unwrap();
        g.backward(sum).unwrap();
        let gl = g.grad(l).unwrap();
        assert_eq!(gl.data()[0], 0.0);
        assert_eq!(gl.data()[1], 0.0);
        assert!(gl.data()[2] > 0.0 && gl.data()[3] > 0.0);
        assert!(g.grad(t).unwrap().item() < 0.0);
    }

    #[test]
    fn zero_key_weights_give_constant_scores() {
        let mut store = ParamStore::<f64>::new();
        let p = params(&mut store, 4, 5);
        store.assign(p.w_key, vec![0.0; 16]).unwrap();
        let x = random(&mut rng(6), &[5, 4], 1.0);
        let mut g = Graph::new(&store);
        let xv = g.input(x);
        let a = lrgc_forward(&mut g, xv, &p).unwrap();
        let expect = (0.5 - sig(-1.0)).tanh();
        assert!(g.value(a.scores).iter().all(|&s| (s - expect).abs() < 1e-15));
    }

    #[test]
    fn huge_tau_gives_empty_graph() {
        let mut store = ParamStore::<f64>::new();
        let p = params(&mut store, 4, 7);
        store.assign(p.tau, vec![20.0]).unwrap();
        let x = random(&mut rng(8), &[2, 5, 4], 1.0);
        let mut g = Graph::new(&store);
        let xv = g.input(x);
        let a = lrgc_forward(&mut g, xv, &p).unwrap();
        let stats = edge_stats(&g.tensor(a.scores)).unwrap();
        assert_eq!(stats.avg_neighbors, 0.0);
    }

    /// Per-edge scalar reference of the whole block.
    fn lrgc_oracle(x: &[f64], wk: &[f64], wq: &[f64], tau: f64, n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
        let proj = |w: &[f64], node: usize| -> Vec<f64> {
            (0..d)
                .map(|o| (0..d).map(|i| x[node * d + i] * w[i * d + o]).sum())
                .collect()
        };
        let mut logits = vec![0.0; n * n];
        let mut scores = vec![0.0; n * n];
        for i in 0..n {
            let key = proj(wk, i);
            for j in 0..n {
                let query = proj(wq, j);
                let l: f64 = key.iter().zip(&query).map(|(a, b)| a * b).sum();
                logits[i * n + j] = l;
                scores[i * n + j] = score_oracle(l, tau);
            }
        }
        (logits, scores)
    }

    #[test]
    fn lrgc_matches_per_edge_oracle() {
        let mut r = rng(9);
        for case in 0..10 {
            let (n, d) = (r.random_range(2..10), r.random_range(1..7));
            let mut store = ParamStore::<f64>::new();
            let p = params(&mut store, d, case);
            store.assign(p.w_key, random(&mut r, &[d, d], 1.0).into_data()).unwrap();
            store.assign(p.w_query, random(&mut r, &[d, d], 1.0).into_data()).unwrap();
            store.assign(p.tau, vec![r.random_range(-2.0..2.0)]).unwrap();
            let x = random(&mut r, &[n, d], 1.0);
            let (el, es) = lrgc_oracle(
                x.data(),
                store.tensor(p.w_key).data(),
                store.tensor(p.w_query).data(),
                p.tau_value(&store),
                n,
                d,
            );
            let mut g = Graph::new(&store);
            let xv = g.input(x);
            let a = lrgc_forward(&mut g, xv, &p).unwrap();
            for (v, e) in g.value(a.logits).iter().zip(&el) {
                assert!((v - e).abs() < 1e-12);
            }
            for (v, e) in g.value(a.scores).iter().zip(&es) {
                assert!((v - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_stats_counting() {
        let full = Tensor::<f64>::full([196, 196], 0.3);
        let s = edge_stats(&full).unwrap();
        assert_eq!(s.avg_neighbors, 196.0);
        assert_eq!(edge_stats(&Tensor::<f64>::zeros([5, 5])).unwrap().avg_neighbors, 0.0);
        let mask = Tensor::<f64>::from_f64([3, 3], &[0.1, 0.0, 0.0, 0.2, 0.5, 0.0, 0.0, 0.0, 0.4]).unwrap();
        let s = edge_stats(&mask).unwrap();
        assert!((s.avg_neighbors - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.degree_per_node, vec![2.0, 1.0, 1.0]);
        assert!(edge_stats(&Tensor::<f64>::zeros([2, 3])).is_err());
    }

    #[test]
    fn tau_gradient_matches_finite_differences() {
        let mut r = rng(10);
        let mut store = ParamStore::<f64>::new();
        let p = params(&mut store, 4, 11);
        store.assign(p.w_key, random(&mut r, &[4, 4], 1.0).into_data()).unwrap();
        store.assign(p.w_query, random(&mut r, &[4, 4], 1.0).into_data()).unwrap();
        store.assign(p.tau, vec![0.1]).unwrap();
        let x = random(&mut r, &[6, 4], 1.0);
        let weights = random(&mut r, &[6, 6], 1.0);
        let ids = [p.tau, p.w_key, p.w_query];
        let report = finite_diff_check(
            &mut store,
            &ids,
            |g| {
                let xv = g.input(x.clone());
                let a = lrgc_forward(g, xv, &p)?;
                let w = g.input(weights.clone());
                let s = g.mul(a.scores, w)?;
                g.sum(s)
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert!(report.groups[0].checked == 1, "tau should not sit on a kink");
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn dead_edges_carry_no_gradient() {
        let mut r = rng(12);
        let mut store = ParamStore::<f64>::new();
        let p = params(&mut store, 4, 13);
        store.assign(p.w_key, random(&mut r, &[4, 4], 1.5).into_data()).unwrap();
        store.assign(p.w_query, random(&mut r, &[4, 4], 1.5).into_data()).unwrap();
        store.assign(p.tau, vec![0.0]).unwrap();
        let x = random(&mut r, &[8, 4], 1.0);
        let weights = random(&mut r, &[8, 8], 1.0);

        let run = |w: &Tensor<f64>| {
            let mut g = Graph::new(&store);
            let xv = g.input(x.clone());
            let a = lrgc_forward(&mut g, xv, &p).unwrap();
            let wv = g.input(w.clone());
            let s = g.mul(a.scores, wv).unwrap();
            let l = g.sum(s).unwrap();
            g.backward(l).unwrap();
            let logits = g.value(a.logits).to_vec();
            let dlogits = g.grad(a.logits).unwrap().into_data();
            (logits, dlogits, g.into_param_grads())
        };
        let (logits, dlogits, grads) = run(&weights);
        let dead: Vec<usize> = (0..64).filter(|&e| logits[e] < -1e-3).collect();
        assert!(dead.len() > 5 && dead.len() < 60, "need a mix of live and dead edges");
        for &e in &dead {
            assert_eq!(dlogits[e], 0.0);
        }
        // Re-weighting dead edges must leave every parameter gradient unchanged.
        let mut altered = weights.clone();
        for &e in &dead {
            altered.data_mut()[e] = 100.0;
        }
        let (_, _, grads2) = run(&altered);
        for (a, b) in grads.iter().zip(&grads2) {
            assert_eq!(a.0, b.0);
            assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn raising_tau_never_adds_edges() {
        let mut r = rng(14);
        let logits: Vec<f64> = (0..400).map(|_| r.random_range(-4.0..4.0)).collect();
        let mut prev = usize::MAX;
        for step in 0..40 {
            let tau = -4.5 + step as f64 * 0.25;
            let count = threshold_values(&logits, tau).iter().filter(|&&s| s > 0.0).count();
            assert!(count <= prev);
            prev = count;
        }
        assert_eq!(prev, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn selection_and_bound(logits in prop::collection::vec(-8.0f64..8.0, 1..40), tau in -6.0f64..6.0) {
            let scores = threshold_values(&logits, tau);
            let bound = score_upper_bound(tau);
            for (&l, &s) in logits.iter().zip(&scores) {
                prop_assert_eq!(s > 0.0, l > tau);
                prop_assert!(s >= 0.0 && s < bound);
            }
        }
    }
}
