use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::params::ParamKind;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

// Abramowitz-Stegun-free erf: Maclaurin series, fine for |x| < 3.
fn erf_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = x;
    for n in 0..60 {
        sum += term / (2 * n + 1) as f64;
        term *= -x * x / (n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

#[test]
fn matmul_identity_and_hand_cases() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let i2 = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(y), &[1.0, 2.0, 3.0, 4.0]);

    let a = g.input(t(&[1, 2], &[1.0, 2.0]));
    let b = g.input(t(&[2, 1], &[3.0, 4.0]));
    let y = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(y), &[1, 1]);
    assert_eq!(g.value(y), &[11.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[5, 7]);
    let b = random(&mut rng, &[7, 3]);
    let expect = naive_matmul(a.data(), b.data(), 5, 7, 3);
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (va, vb) = (g.input(a), g.input(b));
    let y = g.matmul(va, vb).unwrap();
    for (x, e) in g.value(y).iter().zip(&expect) {
        assert!((x - e).abs() < 1e-12);
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(Tensor::<f64>::zeros([2, 3]));
    let b = g.input(Tensor::<f64>::zeros([4, 5]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[4, 5]"), "{err}");
}

#[test]
fn unary_scalar_values() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(t(&[3], &[0.0, -1.0, 1.0]));
    let s = g.sigmoid(x).unwrap();
    assert_eq!(g.value(s)[0], 0.5);
    assert!((g.value(s)[1] - 0.2689414).abs() < 1e-7);
    assert!((g.value(s)[1] - 1.0 / (1.0 + std::f64::consts::E)).abs() < 1e-15);

    let ge = g.gelu(x).unwrap();
    assert_eq!(g.value(ge)[0], 0.0);
    let exact = 0.5 * (1.0 + erf_series(1.0 / 2f64.sqrt()));
    assert!((exact - 0.841345).abs() < 1e-6);
    assert!((g.value(ge)[2] - 0.8412).abs() < 1e-3);
    assert!((g.value(ge)[2] - exact).abs() < 1e-3);

    let th = g.tanh(x).unwrap();
    assert_eq!(g.value(th)[0], 0.0);
    let r = g.input(t(&[1], &[-3.0]));
    let r = g.relu(r).unwrap();
    assert_eq!(g.value(r), &[0.0]);
}

#[test]
fn max_axis_hand_cases() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(t(&[2, 2], &[1.0, 5.0, 3.0, 2.0]));
    let (m, arg) = g.max_axis(x, 1).unwrap();
    assert_eq!(g.value(m), &[5.0, 3.0]);
    assert_eq!(arg, vec![1, 0]);

    let x = g.input(t(&[3], &[4.0, 4.0, 4.0]));
    let (m, arg) = g.max_axis(x, 0).unwrap();
    assert_eq!(g.value(m), &[4.0]);
    assert_eq!(arg, vec![0]);

    let e = g.input(Tensor::<f64>::zeros([2, 0]));
    assert!(matches!(g.max_axis(e, 1), Err(Error::EmptyAxis { .. })));
    assert!(g.max_axis(x, 1).is_err());
}

#[test]
fn max_axis_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[3, 8, 16]);
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let v = g.input(x.clone());
    let d = x.data();
    for axis in 0..3 {
        let (m, arg) = g.max_axis(v, axis).unwrap();
        let mut k = 0;
        let dims = [3, 8, 16];
        let mut idx = [0usize; 3];
        let other: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for o0 in 0..dims[other[0]] {
            for o1 in 0..dims[other[1]] {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for l in 0..dims[axis] {
                    idx[other[0]] = o0;
                    idx[other[1]] = o1;
                    idx[axis] = l;
                    let val = d[(idx[0] * 8 + idx[1]) * 16 + idx[2]];
                    if val > best {
                        best = val;
                        best_i = l;
                    }
                }
                assert_eq!(g.value(m)[k], best);
                assert_eq!(arg[k], best_i);
                k += 1;
            }
        }
    }
}

#[test]
fn max_axis_gradient_goes_to_single_winner() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.leaf(t(&[3], &[4.0, 4.0, 1.0]).with_requires_grad(true));
    let (m, _) = g.max_axis(x, 0).unwrap();
    let s = g.sum(m).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn backward_linear_and_quadratic() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.leaf(Tensor::<f64>::ones([4]).with_requires_grad(true));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);

    let mut g = Graph::new(&store);
    let x = g.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_errors() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.leaf(Tensor::<f64>::ones([3]).with_requires_grad(true));
    assert!(matches!(g.backward(x), Err(Error::NotScalar(_))));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::BackwardTwice)));
    g.reset_grads();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0; 3]);
}

#[test]
fn checked_mode_rejects_non_finite() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(t(&[1], &[f64::INFINITY]));
    assert!(g.sub(a, a).is_ok());
    g.set_checked(true);
    g.push_scope("blk");
    let err = g.sub(a, a).unwrap_err();
    assert!(matches!(err, Error::NonFinite { op: "sub", ref scope } if scope == "blk"));
}

/// Store with three random parameters used by the composite-op checks.
fn composite_store(seed: u64) -> (ParamStore<f64>, [ParamId; 3]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let a = store.add("a", ParamKind::Weight, random(&mut rng, &[2, 3, 4]));
    let w = store.add("w", ParamKind::Weight, random(&mut rng, &[4, 4]));
    let b = store.add("b", ParamKind::NoDecay, random(&mut rng, &[4]));
    (store, [a, w, b])
}

/// Exercises every differentiable primitive that the model uses.
fn composite(g: &mut Graph<'_, f64>, ids: [ParamId; 3], c: f64) -> Result<Var> {
    let a = g.param(ids[0]);
    let w = g.param(ids[1]);
    let b = g.param(ids[2]);
    let h = g.matmul(a, w)?;
    let h = g.add(h, b)?;
    let s = g.sigmoid(h)?;
    let t = g.tanh(h)?;
    let u = g.gelu(h)?;
    let st = g.mul(s, t)?;
    let su = g.sub(st, u)?;
    let cat = g.concat_last(su, h)?;
    let p = g.permute(cat, &[1, 0, 2])?;
    let r = g.reshape(p, &[3, 16])?;
    let m = g.mean_axis(r, 0)?;
    let logits = g.matmul_nt(h, h)?;
    let wg = g.reshape(w, &[2, 2, 4])?;
    let grp = g.grouped_matmul(h, wg)?;
    let agg = g.max_relative(h, logits)?;
    let l1 = g.sum(m)?;
    let l2 = g.sum(grp)?;
    let l3 = g.sum(agg)?;
    let l12 = g.add(l1, l2)?;
    let l = g.add(l12, l3)?;
    g.scale(l, c)
}

#[test]
fn composite_matches_finite_differences() {
    let (mut store, ids) = composite_store(3);
    let report = finite_diff_check(
        &mut store,
        &ids,
        |g| composite(g, ids, 1.0),
        &FdOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error() < 1e-6, "{report:?}");
    assert!(report.groups.iter().all(|g| g.checked > 0));
}

#[test]
fn backward_is_linear() {
    let (store, ids) = composite_store(4);
    let grads = |c: f64| {
        let mut g = Graph::new(&store);
        let l = composite(&mut g, ids, c).unwrap();
        g.backward(l).unwrap();
        g.into_param_grads()
    };
    let f = grads(1.0);
    let h = grads(-0.5);
    let combo = {
        let mut g = Graph::new(&store);
        let l1 = composite(&mut g, ids, 1.0).unwrap();
        let l2 = composite(&mut g, ids, -0.5).unwrap();
        let l1 = g.scale(l1, 2.0).unwrap();
        let l2 = g.scale(l2, 3.0).unwrap();
        let l = g.add(l1, l2).unwrap();
        g.backward(l).unwrap();
        g.into_param_grads()
    };
    for ((fi, hi), ci) in f.iter().zip(&h).zip(&combo) {
        for ((a, b), c) in fi.1.iter().zip(&hi.1).zip(&ci.1) {
            assert!((2.0 * a + 3.0 * b - c).abs() < 1e-12);
        }
    }
}

#[test]
fn tape_is_deterministic() {
    let (store, ids) = composite_store(5);
    let run = || {
        let mut g = Graph::new(&store);
        let l = composite(&mut g, ids, 1.0).unwrap();
        g.backward(l).unwrap();
        g.into_param_grads()
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(&b) {
        assert!(x.1.iter().zip(&y.1).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn fd_check_square() {
    let mut store = ParamStore::new();
    let x = store.add("x", ParamKind::Weight, Tensor::scalar(3.0));
    let report = finite_diff_check(
        &mut store,
        &[x],
        |g| {
            let v = g.param(x);
            g.mul(v, v)
        },
        &FdOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error() < 1e-9);
    let grp = &report.groups[0];
    assert!((grp.worst_analytic - 6.0).abs() < 1e-12);
}

#[test]
fn fd_check_reports_relu_kink() {
    let mut store = ParamStore::new();
    let x = store.add("x", ParamKind::Weight, Tensor::from_f64([2], &[0.0, 0.7]).unwrap());
    let report = finite_diff_check(
        &mut store,
        &[x],
        |g| {
            let v = g.param(x);
            let r = g.relu(v)?;
            g.sum(r)
        },
        &FdOptions::default(),
    )
    .unwrap();
    assert_eq!(
        report.kinks,
        vec![KinkCoordinate {
            param: "x".into(),
            index: 0
        }]
    );
    assert_eq!(report.groups[0].checked, 1);
    assert!(report.passes(1e-9));
}

#[test]
fn fd_check_detects_nondeterminism() {
    let mut store = ParamStore::new();
    let x = store.add("x", ParamKind::Weight, Tensor::scalar(1.0));
    let mut calls = 0.0;
    let err = finite_diff_check(
        &mut store,
        &[x],
        |g| {
            calls += 1.0;
            let v = g.param(x);
            g.scale(v, calls)
        },
        &FdOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonDeterministic { .. }));
}

#[test]
fn fd_check_catches_tanh_sign_flip() {
    let mut store = ParamStore::new();
    let x = store.add("x", ParamKind::Weight, Tensor::from_f64([2], &[0.3, -0.4]).unwrap());
    let f = |g: &mut Graph<'_, f64>| {
        let v = g.param(x);
        let t = g.tanh(v)?;
        g.sum(t)
    };
    let opts = FdOptions {
        fault: Some(Fault::TanhBackwardSignFlip),
        ..FdOptions::default()
    };
    let bad = finite_diff_check(&mut store, &[x], f, &opts).unwrap();
    assert!(!bad.passes(1e-5));
    let good = finite_diff_check(&mut store, &[x], f, &FdOptions::default()).unwrap();
    assert!(good.passes(1e-6));
}

#[test]
fn conv_and_batchnorm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let x = store.add("x", ParamKind::Weight, random(&mut rng, &[2, 2, 5, 5]));
    let w = store.add("w", ParamKind::Weight, random(&mut rng, &[3, 2, 3, 3]));
    let b = store.add("b", ParamKind::NoDecay, random(&mut rng, &[3]));
    let gamma = store.add("gamma", ParamKind::NoDecay, random(&mut rng, &[3]));
    let beta = store.add("beta", ParamKind::NoDecay, random(&mut rng, &[3]));
    let rm = store.add("rm", ParamKind::Buffer, Tensor::zeros([3]));
    let rv = store.add("rv", ParamKind::Buffer, Tensor::ones([3]));
    let proj = random(&mut rng, &[2, 3, 3, 3]);
    for training in [true, false] {
        // Batch statistics cancel a per-channel bias exactly, so its true
        // gradient is zero and only roundoff would be compared.
        let ids: Vec<ParamId> = if training {
            vec![x, w, gamma, beta]
        } else {
            vec![x, w, b, gamma, beta]
        };
        let report = finite_diff_check(
            &mut store,
            &ids,
            |g| {
                let (xv, wv, bv) = (g.param(x), g.param(w), g.param(b));
                let y = g.conv2d(xv, wv, Some(bv), 2, 1)?;
                let (gv, btv) = (g.param(gamma), g.param(beta));
                let y = g.batch_norm2d(y, gv, btv, rm, rv, 0.1, 1e-5, training)?;
                let p = g.input(proj.clone());
                let y = g.mul(y, p)?;
                g.sum(y)
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-6, "training={training}: {report:?}");
    }
}

#[test]
fn soft_cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let z = store.add("z", ParamKind::Weight, random(&mut rng, &[3, 5]));
    let q: Vec<f64> = (0..15).map(|i| if i % 5 == i / 5 { 0.8 } else { 0.05 }).collect();
    let report = finite_diff_check(
        &mut store,
        &[z],
        |g| {
            let v = g.param(z);
            g.soft_cross_entropy(v, &q)
        },
        &FdOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_backward_matches_transposed_products(
        m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[m, k]);
        let b = random(&mut rng, &[k, n]);
        let up = random(&mut rng, &[m, n]);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let va = g.leaf(a.clone().with_requires_grad(true));
        let vb = g.leaf(b.clone().with_requires_grad(true));
        let y = g.matmul(va, vb).unwrap();
        let u = g.input(up.clone());
        let y = g.mul(y, u).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        // a.grad = up . b^T ; b.grad = a^T . up
        let mut bt = vec![0.0; n * k];
        for p in 0..k { for j in 0..n { bt[j * k + p] = b.data()[p * n + j]; } }
        let mut at = vec![0.0; k * m];
        for i in 0..m { for p in 0..k { at[p * m + i] = a.data()[i * k + p]; } }
        let ga = naive_matmul(up.data(), &bt, m, n, k);
        let gb = naive_matmul(&at, up.data(), k, m, n);
        for (x, e) in g.grad(va).unwrap().data().iter().zip(&ga) { prop_assert!((x - e).abs() < 1e-12); }
        for (x, e) in g.grad(vb).unwrap().data().iter().zip(&gb) { prop_assert!((x - e).abs() < 1e-12); }
    }
}

#[test]
fn disconnected_parameter_reports_absolute_error() {
    let mut store = ParamStore::new();
    let x = store.add("x", ParamKind::Weight, Tensor::from_f64([2], &[0.3, -0.4]).unwrap());
    let unused = store.add("unused", ParamKind::Weight, Tensor::from_f64([1], &[1.0]).unwrap());
    let f = |g: &mut Graph<'_, f64>| {
        let _ = g.param(unused);
        let v = g.param(x);
        let t = g.tanh(v)?;
        g.sum(t)
    };
    let r = finite_diff_check(&mut store, &[x, unused], f, &FdOptions::default()).unwrap();
    assert_eq!(r.groups[1].checked, 1);
    assert!(r.groups[1].max_rel_error < 1e-12);
    assert!(r.passes(1e-6));
}
