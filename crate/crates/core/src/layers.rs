//! Neural building blocks on top of the tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{numel, Element, Tensor};

/// Default standard deviation for projection weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Normal(0, std) resampled until within `[-2 std, 2 std]`.
    TruncNormal { std: f64 },
    Zeros,
    Ones,
    Constant(f64),
}

/// Draws a tensor from `scheme` using `rng`.
pub fn init_tensor<T: Element>(shape: &[usize], scheme: InitScheme, rng: &mut ChaCha8Rng) -> Tensor<T> {
    match scheme {
        InitScheme::TruncNormal { std } => {
            assert!(std > 0.0, "trunc_normal std must be positive");
            let normal = Normal::new(0.0, std).expect("finite std");
            Tensor::from_fn(shape.to_vec(), |_| loop {
                let v: f64 = normal.sample(rng);
                if v.abs() <= 2.0 * std {
                    break T::lit(v);
                }
            })
        }
        InitScheme::Zeros => Tensor::zeros(shape.to_vec()),
        InitScheme::Ones => Tensor::ones(shape.to_vec()),
        InitScheme::Constant(c) => Tensor::full(shape.to_vec(), T::lit(c)),
    }
}

/// Seeded convenience wrapper around [`init_tensor`].
pub fn init_params<T: Element>(shape: &[usize], scheme: InitScheme, seed: u64) -> Tensor<T> {
    init_tensor(shape, scheme, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn last_dim_check(g: &Graph<'_, impl Element>, op: &'static str, x: Var, expected: usize) -> Result<()> {
    let shape = g.shape(x);
    if shape.last() != Some(&expected) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: vec![expected],
        });
    }
    Ok(())
}

/// `y = x W (+ b)` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            init_tensor(&[in_dim, out_dim], InitScheme::TruncNormal { std: INIT_STD }, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), ParamKind::NoDecay, Tensor::zeros([out_dim])));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        last_dim_check(g, "linear", x, self.in_dim)?;
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Block-diagonal linear map: the input's last axis is split into `heads`
/// contiguous groups, each projected by its own weight, and re-joined.
#[derive(Clone, Debug)]
pub struct GroupedLinear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub heads: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl GroupedLinear {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || !in_dim.is_multiple_of(heads) || !out_dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{name}: {heads} heads must divide both {in_dim} and {out_dim}"
            )));
        }
        let weight = store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            init_tensor(
                &[heads, in_dim / heads, out_dim / heads],
                InitScheme::TruncNormal { std: INIT_STD },
                rng,
            ),
        );
        let bias = store.add(format!("{name}.bias"), ParamKind::NoDecay, Tensor::zeros([out_dim]));
        Ok(GroupedLinear {
            weight,
            bias,
            heads,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        last_dim_check(g, "grouped_linear", x, self.in_dim)?;
        let w = g.param(self.weight);
        let y = g.grouped_matmul(x, w)?;
        let b = g.param(self.bias);
        g.add(y, b)
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (stride > 0 && kernel <= padded).then(|| (padded - kernel) / stride + 1)
}

#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            init_tensor(
                &[out_channels, in_channels, kernel, kernel],
                InitScheme::TruncNormal { std: INIT_STD },
                rng,
            ),
        );
        let bias = store.add(format!("{name}.bias"), ParamKind::NoDecay, Tensor::zeros([out_channels]));
        Conv2dLayer {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: store.add(format!("{name}.gamma"), ParamKind::NoDecay, Tensor::ones([channels])),
            beta: store.add(format!("{name}.beta"), ParamKind::NoDecay, Tensor::zeros([channels])),
            running_mean: store.add(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros([channels])),
            running_var: store.add(format!("{name}.running_var"), ParamKind::Buffer, Tensor::ones([channels])),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var, training: bool) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.batch_norm2d(
            x,
            gamma,
            beta,
            self.running_mean,
            self.running_var,
            self.momentum,
            self.eps,
            training,
        )
    }
}

/// Feature-wise mean over the node axis: `[B, N, D] -> [B, D]`.
pub fn avgpool_all_nodes<T: Element>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    let shape = g.shape(x);
    if shape.len() != 3 {
        return Err(Error::InvalidShape {
            op: "avgpool_all_nodes",
            msg: format!("expected [B, N, D], got {shape:?}"),
        });
    }
    if numel(&shape[1..2]) == 0 {
        return Err(Error::EmptyAxis { op: "avgpool_all_nodes" });
    }
    g.mean_axis(x, 1)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::autodiff::{finite_diff_check, FdOptions};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_schemes() {
        assert_eq!(init_params::<f64>(&[3], InitScheme::Zeros, 0).data(), &[0.0; 3]);
        assert_eq!(init_params::<f64>(&[2], InitScheme::Ones, 0).data(), &[1.0; 2]);
        let t = init_params::<f64>(&[4096], InitScheme::TruncNormal { std: 0.02 }, 11);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
        let spread = t.data().iter().map(|v| v * v).sum::<f64>() / 4096.0;
        assert!(spread.sqrt() > 0.015 && spread.sqrt() < 0.02);
        let again = init_params::<f64>(&[4096], InitScheme::TruncNormal { std: 0.02 }, 11);
        assert_eq!(t, again);
    }

    #[test]
    fn linear_hand_cases() {
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "l", 2, 1, true, &mut rng(0));
        store.assign(lin.weight, vec![2.0, 3.0]).unwrap();
        store.assign(lin.bias.unwrap(), vec![1.0]).unwrap();
        let ident = Linear::new(&mut store, "i", 3, 3, true, &mut rng(0));
        store
            .assign(ident.weight, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_f64([1, 2], &[1.0, 1.0]).unwrap());
        let y = lin.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y), &[6.0]);
        let x3 = g.input(Tensor::from_f64([2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let y3 = ident.forward(&mut g, x3).unwrap();
        assert_eq!(g.value(y3), g.value(x3));
        assert!(lin.forward(&mut g, x3).is_err());
    }

    #[test]
    fn linear_matches_matmul_plus_bias() {
        let mut r = rng(1);
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "l", 4, 3, true, &mut r);
        store.assign(lin.bias.unwrap(), vec![0.1, -0.2, 0.3]).unwrap();
        let x = random(&mut r, &[2, 5, 4]);
        let w = store.tensor(lin.weight).clone();
        let b = store.tensor(lin.bias.unwrap()).clone();
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let y = lin.forward(&mut g, xv).unwrap();
        for row in 0..10 {
            for o in 0..3 {
                let mut acc = b.data()[o];
                for i in 0..4 {
                    acc += x.data()[row * 4 + i] * w.data()[i * 3 + o];
                }
                assert!((g.value(y)[row * 3 + o] - acc).abs() < 1e-15);
            }
        }
    }

    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
        let (bn, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; bn * o * oh * ow];
        for bi in 0..bn {
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[oc];
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                                        continue;
                                    }
                                    acc += x.data()[((bi * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * c + ic) * k + ky) * k + kx];
                                }
                            }
                        }
                        out[((bi * o + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut r = rng(2);
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 1), (3, 2)] {
            let mut store = ParamStore::<f64>::new();
            let conv = Conv2dLayer::new(&mut store, "c", 3, 4, 3, stride, pad, &mut r);
            let w = random(&mut r, &[4, 3, 3, 3]);
            let b: Vec<f64> = (0..4).map(|i| i as f64 * 0.1).collect();
            store.assign(conv.weight, w.data().to_vec()).unwrap();
            store.assign(conv.bias, b.clone()).unwrap();
            let x = random(&mut r, &[2, 3, 7, 6]);
            let expect = conv_oracle(&x, &w, &b, stride, pad);
            let mut g = Graph::new(&store);
            let xv = g.input(x);
            let y = conv.forward(&mut g, xv).unwrap();
            let oh = conv_out_size(7, 3, stride, pad).unwrap();
            let ow = conv_out_size(6, 3, stride, pad).unwrap();
            assert_eq!(g.shape(y), &[2, 4, oh, ow]);
            for (a, e) in g.value(y).iter().zip(&expect) {
                assert!((a - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn conv_all_ones_on_constant_image() {
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2dLayer::new(&mut store, "c", 1, 1, 3, 1, 1, &mut rng(0));
        store.assign(conv.weight, vec![1.0; 9]).unwrap();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::full([1, 1, 5, 5], 2.0));
        let y = conv.forward(&mut g, x).unwrap();
        let v = g.value(y);
        for yy in 1..4 {
            for xx in 1..4 {
                assert_eq!(v[yy * 5 + xx], 18.0);
            }
        }
        assert_eq!(v[0], 8.0);
    }

    #[test]
    fn conv_1x1_is_per_pixel_linear() {
        let mut r = rng(3);
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2dLayer::new(&mut store, "c", 3, 5, 1, 1, 0, &mut r);
        let lin = Linear::new(&mut store, "l", 3, 5, true, &mut r);
        let w = random(&mut r, &[5, 3, 1, 1]);
        store.assign(conv.weight, w.data().to_vec()).unwrap();
        // linear weight is the transpose: [in, out]
        let wt: Vec<f64> = (0..15).map(|i| w.data()[(i % 5) * 3 + i / 5]).collect();
        store.assign(lin.weight, wt).unwrap();
        let x = random(&mut r, &[2, 3, 4, 4]);
        let mut g = Graph::new(&store);
        let xv = g.input(x);
        let y = conv.forward(&mut g, xv).unwrap();
        let y = g.permute(y, &[0, 2, 3, 1]).unwrap();
        let xp = g.permute(xv, &[0, 2, 3, 1]).unwrap();
        let z = lin.forward(&mut g, xp).unwrap();
        for (a, b) in g.value(y).iter().zip(g.value(z)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2dLayer::new(&mut store, "c", 1, 1, 5, 1, 0, &mut rng(0));
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::zeros([1, 1, 3, 3]));
        assert!(conv.forward(&mut g, x).is_err());
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut r = rng(4);
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 3);
        let x = Tensor::from_fn([8, 3, 4, 4], |i| r.random_range(-2.0..5.0) * (1 + i % 3) as f64);
        let mut g = Graph::new(&store);
        let xv = g.input(x);
        let y = bn.forward(&mut g, xv, true).unwrap();
        let v = g.value(y);
        for c in 0..3 {
            let vals: Vec<f64> = (0..8)
                .flat_map(|b| (0..16).map(move |s| (b * 3 + c) * 16 + s))
                .map(|i| v[i])
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
        let updates = g.take_buffer_updates();
        assert_eq!(updates.len(), 2);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1);
        store.assign(bn.running_mean, vec![2.0]).unwrap();
        store.assign(bn.running_var, vec![4.0 - 1e-5]).unwrap();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_f64([1, 1, 1, 2], &[2.0, 6.0]).unwrap());
        let y = bn.forward(&mut g, x, false).unwrap();
        assert!((g.value(y)[0]).abs() < 1e-12);
        assert!((g.value(y)[1] - 2.0).abs() < 1e-12);
        assert!(g.take_buffer_updates().is_empty());
    }

    #[test]
    fn avgpool_cases() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let one = g.input(Tensor::from_f64([1, 1, 3], &[1.0, 2.0, 3.0]).unwrap());
        let p = avgpool_all_nodes(&mut g, one).unwrap();
        assert_eq!(g.value(p), &[1.0, 2.0, 3.0]);
        let two = g.input(Tensor::from_f64([1, 2, 2], &[1.0, 3.0, 3.0, 5.0]).unwrap());
        let p = avgpool_all_nodes(&mut g, two).unwrap();
        assert_eq!(g.value(p), &[2.0, 4.0]);
        let empty = g.input(Tensor::zeros([1, 0, 2]));
        assert!(avgpool_all_nodes(&mut g, empty).is_err());

        let mut r = rng(5);
        let x = random(&mut r, &[3, 7, 4]);
        let xv = g.input(x.clone());
        let p = avgpool_all_nodes(&mut g, xv).unwrap();
        for b in 0..3 {
            for d in 0..4 {
                let s: f64 = (0..7).map(|n| x.data()[(b * 7 + n) * 4 + d]).sum();
                assert!((g.value(p)[b * 4 + d] - s / 7.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn layer_gradients() {
        let mut r = rng(6);
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "lin", 4, 6, true, &mut r);
        let grp = GroupedLinear::new(&mut store, "grp", 6, 6, 3, &mut r).unwrap();
        let conv = Conv2dLayer::new(&mut store, "conv", 2, 4, 3, 2, 1, &mut r);
        // move away from the tiny default init so gradients are well scaled
        for id in store.ids().collect::<Vec<_>>() {
            let n = store.tensor(id).numel();
            let data = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            store.assign(id, data).unwrap();
        }
        let x = random(&mut r, &[2, 2, 6, 6]);
        let ids: Vec<ParamId> = store.ids().collect();
        let report = finite_diff_check(
            &mut store,
            &ids,
            |g| {
                let xv = g.input(x.clone());
                let c = conv.forward(g, xv)?;
                let c = g.reshape(c, &[2, 9, 4])?;
                let h = lin.forward(g, c)?;
                let h = g.gelu(h)?;
                let h = grp.forward(g, h)?;
                let p = avgpool_all_nodes(g, h)?;
                let t = g.tanh(p)?;
                g.sum(t)
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn grouped_linear_rejects_bad_heads() {
        let mut store = ParamStore::<f64>::new();
        assert!(GroupedLinear::new(&mut store, "g", 6, 6, 4, &mut rng(0)).is_err());
    }
}
