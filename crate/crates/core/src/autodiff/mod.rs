//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a computation tape: every operation appends one node whose
//! inputs are earlier nodes, so construction order is a topological order and
//! [`Graph::backward`] visits each node exactly once in reverse.
//!
//! Parameters are borrowed from a [`ParamStore`] rather than copied; their
//! gradients are handed back with [`Graph::into_param_grads`] once the graph
//! is dropped. A graph is built and differentiated on a single thread.

pub mod gradcheck;
pub mod kernels;

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{numel, Element, Tensor};

use kernels::ConvGeom;

pub use gradcheck::{finite_diff_check, FdOptions, FdReport, GroupReport, KinkCoordinate, Stencil};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Relu => "relu",
            UnaryKind::Gelu => "gelu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// Deliberate backward bugs, used to prove the gradient checker catches them.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    TanhBackwardSignFlip,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
        rows: usize,
        k: usize,
        n: usize,
    },
    BatchMatMulNt {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        n: usize,
        k: usize,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: T,
    },
    Unary {
        kind: UnaryKind,
        a: Var,
    },
    Sum {
        a: Var,
    },
    MeanAxis {
        a: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    MaxAxis {
        a: Var,
        len: usize,
        inner: usize,
        argmax: Vec<usize>,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        map: Vec<usize>,
    },
    Concat {
        a: Var,
        b: Var,
        rows: usize,
        wa: usize,
        wb: usize,
    },
    GroupedMatMul {
        a: Var,
        w: Var,
        rows: usize,
        groups: usize,
        k: usize,
        n: usize,
    },
    MaxRelative {
        x: Var,
        s: Var,
        batch: usize,
        nodes: usize,
        dim: usize,
        argmax: Vec<u32>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        batch: usize,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        batch: usize,
        channels: usize,
        spatial: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    SoftCrossEntropy {
        logits: Var,
        targets: Vec<T>,
        probs: Vec<T>,
        rows: usize,
        classes: usize,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul { .. } => "matmul",
            Op::BatchMatMulNt { .. } => "batch_matmul_nt",
            Op::Binary { kind, .. } => match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
            },
            Op::Scale { .. } => "scale",
            Op::Unary { kind, .. } => kind.name(),
            Op::Sum { .. } => "sum",
            Op::MeanAxis { .. } => "mean_axis",
            Op::MaxAxis { .. } => "max_axis",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::GroupedMatMul { .. } => "grouped_matmul",
            Op::MaxRelative { .. } => "max_relative",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::SoftCrossEntropy { .. } => "soft_cross_entropy",
        }
    }
}

#[derive(Debug)]
enum Value<T> {
    Owned(Vec<T>),
    Param(ParamId),
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
    scope: usize,
}

/// The computation tape.
pub struct Graph<'s, T: Element> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    param_vars: BTreeMap<ParamId, Var>,
    backward_done: bool,
    checked: bool,
    track_kinks: bool,
    kink_hasher: DefaultHasher,
    scopes: Vec<String>,
    scope_stack: Vec<usize>,
    macs: Vec<u64>,
    buffer_updates: Vec<(ParamId, Vec<T>)>,
    fault: Option<Fault>,
}

impl<'s, T: Element> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            grads: Vec::new(),
            param_vars: BTreeMap::new(),
            backward_done: false,
            checked: false,
            track_kinks: false,
            kink_hasher: DefaultHasher::new(),
            scopes: vec![String::new()],
            scope_stack: vec![0],
            macs: vec![0],
            buffer_updates: Vec::new(),
            fault: None,
        }
    }

    /// In checked mode every op scans its output and fails on the first NaN/Inf.
    pub fn set_checked(&mut self, on: bool) {
        self.checked = on;
    }

    /// Records ReLU activation patterns and max/argmax choices into a hash,
    /// so two evaluations can be compared for kink crossings.
    pub fn set_track_kinks(&mut self, on: bool) {
        self.track_kinks = on;
    }

    pub fn kink_signature(&self) -> u64 {
        self.kink_hasher.finish()
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---------------------------------------------------------------- scopes

    /// Enters a named scope; nested scopes are joined with `.`.
    pub fn push_scope(&mut self, name: &str) {
        let parent = *self.scope_stack.last().expect("root scope");
        let full = if self.scopes[parent].is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.scopes[parent], name)
        };
        let id = match self.scopes.iter().position(|s| *s == full) {
            Some(id) => id,
            None => {
                self.scopes.push(full);
                self.macs.push(0);
                self.scopes.len() - 1
            }
        };
        self.scope_stack.push(id);
    }

    pub fn pop_scope(&mut self) {
        if self.scope_stack.len() > 1 {
            self.scope_stack.pop();
        }
    }

    /// Runs `f` inside scope `name`, leaving the scope even on error.
    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.push_scope(name);
        let out = f(self);
        self.pop_scope();
        out
    }

    fn scope(&self) -> usize {
        *self.scope_stack.last().expect("root scope")
    }

    fn count_macs(&mut self, n: usize) {
        let s = self.scope();
        self.macs[s] += n as u64;
    }

    /// Multiply-accumulate counts per scope, as executed.
    pub fn mac_counts(&self) -> BTreeMap<String, u64> {
        self.scopes
            .iter()
            .zip(&self.macs)
            .filter(|(_, &m)| m > 0)
            .map(|(s, &m)| (s.clone(), m))
            .collect()
    }

    // ---------------------------------------------------------------- access

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self.store.tensor(*id).data(),
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape consistent")
    }

    pub fn item(&self, v: Var) -> T {
        let d = self.value(v);
        assert_eq!(d.len(), 1, "item() on non-scalar node");
        d[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad shape"))
    }

    // ---------------------------------------------------------------- leaves

    /// Adds a tensor to the tape; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        let shape = t.shape().to_vec();
        self.push_node(shape, Value::Owned(t.into_data()), Op::Leaf, rg)
    }

    /// Adds a constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    /// Binds a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = self.store.get(id);
        let shape = p.tensor.shape().to_vec();
        let rg = p.trainable();
        let v = self.push_node(shape, Value::Param(id), Op::Param, rg);
        self.param_vars.insert(id, v);
        v
    }

    fn push_node(&mut self, shape: Vec<usize>, value: Value<T>, op: Op<T>, requires_grad: bool) -> Var {
        let scope = self.scope();
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            scope,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        debug_assert_eq!(numel(&shape), data.len());
        if self.checked && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: op.name(),
                scope: self.scopes[self.scope()].clone(),
            });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(shape, Value::Owned(data), op, rg))
    }

    fn hash_kinks(&mut self, tag: u8, bits: impl Iterator<Item = u64>) {
        if self.track_kinks {
            self.kink_hasher.write_u8(tag);
            for b in bits {
                self.kink_hasher.write_u64(b);
            }
        }
    }

    // ---------------------------------------------------------------- linear algebra

    /// `a[..., m, k] . b[k, n] -> [..., m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let k = sb[0];
        let n = sb[1];
        let rows = numel(&sa) / k.max(1);
        let mut out = vec![T::zero(); rows * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, rows, k, n);
        self.count_macs(rows * k * n);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        self.push(shape, out, Op::MatMul { a, b, rows, k, n }, &[a, b])
    }

    /// `a[..., m, k] . b[..., n, k]^T -> [..., m, n]` with matching leading dims.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 1] {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 2]);
        let batch = numel(&sa[..r - 2]);
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for bi in 0..batch {
                let ab = &av[bi * m * k..(bi + 1) * m * k];
                let bb = &bv[bi * n * k..(bi + 1) * n * k];
                let ob = &mut out[bi * m * n..(bi + 1) * m * n];
                for i in 0..m {
                    let arow = &ab[i * k..(i + 1) * k];
                    for j in 0..n {
                        ob[i * n + j] = kernels::dot(arow, &bb[j * k..(j + 1) * k]);
                    }
                }
            }
        }
        self.count_macs(batch * m * n * k);
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        self.push(
            shape,
            out,
            Op::BatchMatMulNt {
                a,
                b,
                batch,
                m,
                n,
                k,
            },
            &[a, b],
        )
    }

    /// Block-diagonal projection: `a[..., G*k]` with `w[G, k, n]` gives `[..., G*n]`.
    pub fn grouped_matmul(&mut self, a: Var, w: Var) -> Result<Var> {
        let (sa, sw) = (self.shape(a).to_vec(), self.shape(w).to_vec());
        if sa.is_empty() || sw.len() != 3 || sa[sa.len() - 1] != sw[0] * sw[1] {
            return Err(Error::ShapeMismatch {
                op: "grouped_matmul",
                lhs: sa,
                rhs: sw,
            });
        }
        let (groups, k, n) = (sw[0], sw[1], sw[2]);
        let width = groups * k;
        let rows = numel(&sa) / width.max(1);
        let mut out = vec![T::zero(); rows * groups * n];
        {
            let (av, wv) = (self.value(a), self.value(w));
            for r in 0..rows {
                for g in 0..groups {
                    let arow = &av[r * width + g * k..r * width + (g + 1) * k];
                    let orow = &mut out[(r * groups + g) * n..(r * groups + g + 1) * n];
                    kernels::matmul_acc(arow, &wv[g * k * n..(g + 1) * k * n], orow, 1, k, n);
                }
            }
        }
        self.count_macs(rows * groups * k * n);
        let mut shape = sa;
        *shape.last_mut().unwrap() = groups * n;
        self.push(
            shape,
            out,
            Op::GroupedMatMul {
                a,
                w,
                rows,
                groups,
                k,
                n,
            },
            &[a, w],
        )
    }

    // ---------------------------------------------------------------- elementwise

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(Error::ShapeMismatch {
                op: match kind {
                    BinaryKind::Add => "add",
                    BinaryKind::Sub => "sub",
                    BinaryKind::Mul => "mul",
                },
                lhs: sa,
                rhs: sb,
            });
        }
        let (av, bv) = (self.value(a), self.value(b));
        let inner = bv.len();
        let out: Vec<T> = av
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bv[i % inner];
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        self.push(sa, out, Op::Binary { kind, a, b }, &[a, b])
    }

    /// Elementwise `a + b`; `b` may broadcast over leading axes of `a`
    /// (its shape must be a suffix of `a`'s shape, including rank 0).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale { a, factor }, &[a])
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let x = self.value(a);
        let out: Vec<T> = match kind {
            UnaryKind::Relu => x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
            UnaryKind::Gelu => x.iter().map(|&v| kernels::gelu(v)).collect(),
            UnaryKind::Sigmoid => x.iter().map(|&v| kernels::sigmoid(v)).collect(),
            UnaryKind::Tanh => x.iter().map(|&v| v.tanh()).collect(),
        };
        if kind == UnaryKind::Relu && self.track_kinks {
            let bits: Vec<u64> = self.value(a).iter().map(|&v| (v > T::zero()) as u64).collect();
            self.hash_kinks(1, bits.into_iter());
        }
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Unary { kind, a }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Gelu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, a)
    }

    // ---------------------------------------------------------------- reductions and layout

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum();
        self.push(Vec::new(), vec![s], Op::Sum { a }, &[a])
    }

    fn split_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<(usize, usize, usize, Vec<usize>)> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(Error::InvalidShape {
                op,
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        if shape[axis] == 0 {
            return Err(Error::EmptyAxis { op });
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        Ok((outer, shape[axis], inner, out_shape))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner, shape) = self.split_axis("mean_axis", a, axis)?;
        let x = self.value(a);
        let mut out = vec![T::zero(); outer * inner];
        let scale = T::one() / T::lit(len as f64);
        for o in 0..outer {
            for l in 0..len {
                let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d = *d + v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * scale);
        self.push(shape, out, Op::MeanAxis { a, outer, len, inner }, &[a])
    }

    /// Maximum along `axis`; ties go to the lowest index. Returns the values
    /// and the winning index for each output element.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<(Var, Vec<usize>)> {
        let (outer, len, inner, shape) = self.split_axis("max_axis", a, axis)?;
        let x = self.value(a);
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = x[o * len * inner + i];
                let mut arg = 0;
                for l in 1..len {
                    let v = x[(o * len + l) * inner + i];
                    if v > best {
                        best = v;
                        arg = l;
                    }
                }
                out[o * inner + i] = best;
                argmax[o * inner + i] = arg;
            }
        }
        self.hash_kinks(2, argmax.iter().map(|&i| i as u64));
        let arg_copy = argmax.clone();
        let v = self.push(
            shape,
            out,
            Op::MaxAxis {
                a,
                len,
                inner,
                argmax,
            },
            &[a],
        )?;
        Ok((v, arg_copy))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(a)) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.value(a).to_vec();
        self.push(shape.to_vec(), data, Op::Reshape { a }, &[a])
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidShape {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of the axes of {shape:?}"),
            });
        }
        let map = kernels::permute_index(&shape, perm);
        let x = self.value(a);
        let out = map.iter().map(|&i| x[i]).collect();
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        self.push(out_shape, out, Op::Permute { a, map }, &[a])
    }

    /// Concatenates along the last axis; leading dims must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: sa,
                rhs: sb,
            });
        }
        let wa = *sa.last().unwrap();
        let wb = *sb.last().unwrap();
        let rows = numel(&sa) / wa.max(1);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(rows * (wa + wb));
        for r in 0..rows {
            out.extend_from_slice(&av[r * wa..(r + 1) * wa]);
            out.extend_from_slice(&bv[r * wb..(r + 1) * wb]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = wa + wb;
        self.push(shape, out, Op::Concat { a, b, rows, wa, wb }, &[a, b])
    }

    // ---------------------------------------------------------------- graph aggregation

    /// Score-weighted max-relative aggregation.
    ///
    /// `x: [B, N, D]`, `s: [B, N, N]` (or unbatched `[N, D]`, `[N, N]`);
    /// `out[j, d] = max_i s[i, j] * (x[i, d] - x[j, d])` over every candidate
    /// source `i`, self included. Ties go to the lowest `i`.
    pub fn max_relative(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x).to_vec(), self.shape(s).to_vec());
        let ok = match (sx.len(), ss.len()) {
            (2, 2) => ss[0] == sx[0] && ss[1] == sx[0],
            (3, 3) => ss[0] == sx[0] && ss[1] == sx[1] && ss[2] == sx[1],
            _ => false,
        };
        if !ok || sx[sx.len() - 2] == 0 {
            return Err(Error::ShapeMismatch {
                op: "max_relative",
                lhs: sx,
                rhs: ss,
            });
        }
        let (batch, nodes, dim) = if sx.len() == 2 {
            (1, sx[0], sx[1])
        } else {
            (sx[0], sx[1], sx[2])
        };
        let mut out = vec![T::zero(); batch * nodes * dim];
        let mut argmax = vec![0u32; batch * nodes * dim];
        {
            let (xv, sv) = (self.value(x), self.value(s));
            for b in 0..batch {
                let xb = &xv[b * nodes * dim..(b + 1) * nodes * dim];
                let sb = &sv[b * nodes * nodes..(b + 1) * nodes * nodes];
                for j in 0..nodes {
                    let xj = &xb[j * dim..(j + 1) * dim];
                    let base = (b * nodes + j) * dim;
                    let best = &mut out[base..base + dim];
                    let arg = &mut argmax[base..base + dim];
                    best.fill(T::neg_infinity());
                    for i in 0..nodes {
                        let sij = sb[i * nodes + j];
                        let xi = &xb[i * dim..(i + 1) * dim];
                        for d in 0..dim {
                            let v = sij * (xi[d] - xj[d]);
                            if v > best[d] {
                                best[d] = v;
                                arg[d] = i as u32;
                            }
                        }
                    }
                }
            }
        }
        self.count_macs(batch * nodes * nodes * dim);
        self.hash_kinks(3, argmax.iter().map(|&i| i as u64));
        self.push(
            sx,
            out,
            Op::MaxRelative {
                x,
                s,
                batch,
                nodes,
                dim,
                argmax,
            },
            &[x, s],
        )
    }

    // ---------------------------------------------------------------- convolution and normalization

    /// Cross-correlation of `x: [B, C, H, W]` with `w: [O, C, kh, kw]` and optional bias `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: sw,
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        if stride == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        let (ph, pw) = (sx[2] + 2 * pad, sx[3] + 2 * pad);
        if sw[2] > ph || sw[3] > pw {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!(
                    "kernel {}x{} larger than padded input {ph}x{pw}",
                    sw[2], sw[3]
                ),
            });
        }
        let geom = ConvGeom {
            in_c: sx[1],
            in_h: sx[2],
            in_w: sx[3],
            out_c: sw[0],
            k_h: sw[2],
            k_w: sw[3],
            stride,
            pad,
            out_h: (ph - sw[2]) / stride + 1,
            out_w: (pw - sw[3]) / stride + 1,
        };
        let batch = sx[0];
        let (cols, pos) = (geom.cols(), geom.positions());
        let in_sz = geom.in_c * geom.in_h * geom.in_w;
        let out_sz = geom.out_c * pos;
        let mut out = vec![T::zero(); batch * out_sz];
        let mut col = vec![T::zero(); cols * pos];
        {
            let xv = self.value(x);
            let wv = self.value(w);
            let bv = b.map(|b| self.value(b));
            for bi in 0..batch {
                kernels::im2col(&xv[bi * in_sz..(bi + 1) * in_sz], &geom, &mut col);
                let ob = &mut out[bi * out_sz..(bi + 1) * out_sz];
                if let Some(bv) = bv {
                    for o in 0..geom.out_c {
                        ob[o * pos..(o + 1) * pos].fill(bv[o]);
                    }
                }
                kernels::matmul_acc(wv, &col, ob, geom.out_c, cols, pos);
            }
        }
        self.count_macs(batch * out_sz * cols);
        let shape = vec![batch, geom.out_c, geom.out_h, geom.out_w];
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(shape, out, Op::Conv2d { x, w, b, batch, geom }, &inputs)
    }

    /// Per-channel batch normalization of `x: [B, C, H, W]`.
    ///
    /// In training mode the batch statistics are used and the running
    /// buffers' new values are queued (see [`Graph::take_buffer_updates`]);
    /// otherwise the running statistics are constants.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: ParamId,
        running_var: ParamId,
        momentum: f64,
        eps: f64,
        training: bool,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 || self.shape(gamma) != [sx[1]] || self.shape(beta) != [sx[1]] {
            return Err(Error::ShapeMismatch {
                op: "batch_norm2d",
                lhs: sx,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let (batch, channels, spatial) = (sx[0], sx[1], sx[2] * sx[3]);
        let count = batch * spatial;
        let eps = T::lit(eps);
        let xv = self.value(x);
        let mut mean = vec![T::zero(); channels];
        let mut var = vec![T::zero(); channels];
        if training {
            if count < 2 {
                return Err(Error::InvalidShape {
                    op: "batch_norm2d",
                    msg: "training mode needs more than one value per channel".into(),
                });
            }
            for c in 0..channels {
                let mut s = T::zero();
                for b in 0..batch {
                    let base = (b * channels + c) * spatial;
                    s = s + xv[base..base + spatial].iter().copied().sum::<T>();
                }
                let m = s / T::lit(count as f64);
                let mut q = T::zero();
                for b in 0..batch {
                    let base = (b * channels + c) * spatial;
                    for &v in &xv[base..base + spatial] {
                        q = q + (v - m) * (v - m);
                    }
                }
                mean[c] = m;
                var[c] = q / T::lit(count as f64);
            }
            let mom = T::lit(momentum);
            let unbias = T::lit(count as f64 / (count as f64 - 1.0));
            let rm = self.store.tensor(running_mean).data();
            let rv = self.store.tensor(running_var).data();
            let new_mean = (0..channels).map(|c| (T::one() - mom) * rm[c] + mom * mean[c]).collect();
            let new_var = (0..channels)
                .map(|c| (T::one() - mom) * rv[c] + mom * var[c] * unbias)
                .collect();
            self.buffer_updates.push((running_mean, new_mean));
            self.buffer_updates.push((running_var, new_var));
        } else {
            mean.copy_from_slice(self.store.tensor(running_mean).data());
            var.copy_from_slice(self.store.tensor(running_var).data());
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * spatial;
                for i in base..base + spatial {
                    let h = (xv[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = gv[c] * h + bv[c];
                }
            }
        }
        self.push(
            sx,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                batch,
                channels,
                spatial,
                xhat,
                inv_std,
                training,
            },
            &[x, gamma, beta],
        )
    }

    /// Batch-mean cross-entropy of `logits: [B, C]` against probability rows `targets: [B, C]`.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || targets.len() != sl[0] * sl[1] || sl[0] == 0 {
            return Err(Error::ShapeMismatch {
                op: "soft_cross_entropy",
                lhs: sl,
                rhs: vec![targets.len()],
            });
        }
        let (rows, classes) = (sl[0], sl[1]);
        let z = self.value(logits);
        let mut probs = vec![T::zero(); rows * classes];
        let mut loss = T::zero();
        for r in 0..rows {
            let zr = &z[r * classes..(r + 1) * classes];
            let m = zr.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + zr.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for c in 0..classes {
                let logp = zr[c] - lse;
                probs[r * classes + c] = logp.exp();
                loss = loss - targets[r * classes + c] * logp;
            }
        }
        loss = loss / T::lit(rows as f64);
        self.push(
            Vec::new(),
            vec![loss],
            Op::SoftCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                rows,
                classes,
            },
            &[logits],
        )
    }

    // ---------------------------------------------------------------- backward

    /// Reverse pass from a scalar `loss`. Gradients of shared nodes accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if numel(self.shape(loss)) != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].shape.iter().product();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }

    fn acc_vec(&mut self, v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(slot) => slot.iter_mut().zip(g).for_each(|(s, x)| *s = *s + x),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        // Temporarily move the op out so input values can be read while
        // gradients are written.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul { a, b, rows, k, n } => {
                if self.requires_grad(a) {
                    let mut da = vec![T::zero(); rows * k];
                    kernels::matmul_nt_acc(g, self.value(b), &mut da, rows, k, n);
                    self.acc_vec(a, da);
                }
                if self.requires_grad(b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::matmul_tn_acc(self.value(a), g, &mut db, rows, k, n);
                    self.acc_vec(b, db);
                }
            }
            &Op::BatchMatMulNt { a, b, batch, m, n, k } => {
                if self.requires_grad(a) {
                    let mut da = vec![T::zero(); batch * m * k];
                    let bv = self.value(b);
                    for bi in 0..batch {
                        // da = g . b
                        kernels::matmul_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bv[bi * n * k..(bi + 1) * n * k],
                            &mut da[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.acc_vec(a, da);
                }
                if self.requires_grad(b) {
                    let mut db = vec![T::zero(); batch * n * k];
                    let av = self.value(a);
                    for bi in 0..batch {
                        // db = g^T . a
                        kernels::matmul_tn_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &av[bi * m * k..(bi + 1) * m * k],
                            &mut db[bi * n * k..(bi + 1) * n * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.acc_vec(b, db);
                }
            }
            &Op::Binary { kind, a, b } => {
                let inner = numel(self.shape(b));
                if self.requires_grad(a) {
                    let da: Vec<T> = match kind {
                        BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                        BinaryKind::Mul => {
                            let bv = self.value(b);
                            g.iter().enumerate().map(|(i, &gi)| gi * bv[i % inner]).collect()
                        }
                    };
                    self.acc_vec(a, da);
                }
                if self.requires_grad(b) {
                    let mut db = vec![T::zero(); inner];
                    match kind {
                        BinaryKind::Add => g.iter().enumerate().for_each(|(i, &gi)| db[i % inner] = db[i % inner] + gi),
                        BinaryKind::Sub => g.iter().enumerate().for_each(|(i, &gi)| db[i % inner] = db[i % inner] - gi),
                        BinaryKind::Mul => {
                            let av = self.value(a);
                            g.iter()
                                .zip(av)
                                .enumerate()
                                .for_each(|(i, (&gi, &x))| db[i % inner] = db[i % inner] + gi * x);
                        }
                    }
                    self.acc_vec(b, db);
                }
            }
            &Op::Scale { a, factor } => {
                let da = g.iter().map(|&v| v * factor).collect();
                self.acc_vec(a, da);
            }
            &Op::Unary { kind, a } => {
                let x = self.value(a);
                let y = self.value(Var(i));
                let da: Vec<T> = match kind {
                    UnaryKind::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                        .collect(),
                    UnaryKind::Gelu => g.iter().zip(x).map(|(&gi, &xi)| gi * kernels::gelu_grad(xi)).collect(),
                    UnaryKind::Sigmoid => g.iter().zip(y).map(|(&gi, &yi)| gi * yi * (T::one() - yi)).collect(),
                    UnaryKind::Tanh => {
                        let sign = if self.fault == Some(Fault::TanhBackwardSignFlip) {
                            -T::one()
                        } else {
                            T::one()
                        };
                        g.iter()
                            .zip(y)
                            .map(|(&gi, &yi)| sign * gi * (T::one() - yi * yi))
                            .collect()
                    }
                };
                self.acc_vec(a, da);
            }
            &Op::Sum { a } => {
                let g0 = g[0];
                self.acc(a, |s| s.iter_mut().for_each(|v| *v = *v + g0));
            }
            &Op::MeanAxis { a, outer, len, inner } => {
                let scale = T::one() / T::lit(len as f64);
                self.acc(a, |s| {
                    for o in 0..outer {
                        for l in 0..len {
                            for d in 0..inner {
                                let idx = (o * len + l) * inner + d;
                                s[idx] = s[idx] + g[o * inner + d] * scale;
                            }
                        }
                    }
                });
            }
            Op::MaxAxis {
                a,
                len,
                inner,
                argmax,
                ..
            } => {
                let (a, len, inner) = (*a, *len, *inner);
                self.acc(a, |s| {
                    for (idx, &arg) in argmax.iter().enumerate() {
                        let (o, d) = (idx / inner, idx % inner);
                        let src = (o * len + arg) * inner + d;
                        s[src] = s[src] + g[idx];
                    }
                });
            }
            &Op::Reshape { a } => self.acc(a, |s| s.iter_mut().zip(g).for_each(|(v, &gi)| *v = *v + gi)),
            Op::Permute { a, map } => {
                let a = *a;
                self.acc(a, |s| {
                    for (o, &src) in map.iter().enumerate() {
                        s[src] = s[src] + g[o];
                    }
                });
            }
            &Op::Concat { a, b, rows, wa, wb } => {
                let w = wa + wb;
                self.acc(a, |s| {
                    for r in 0..rows {
                        for c in 0..wa {
                            s[r * wa + c] = s[r * wa + c] + g[r * w + c];
                        }
                    }
                });
                self.acc(b, |s| {
                    for r in 0..rows {
                        for c in 0..wb {
                            s[r * wb + c] = s[r * wb + c] + g[r * w + wa + c];
                        }
                    }
                });
            }
            &Op::GroupedMatMul { a, w, rows, groups, k, n } => {
                let width = groups * k;
                if self.requires_grad(a) {
                    let mut da = vec![T::zero(); rows * width];
                    let wv = self.value(w);
                    for r in 0..rows {
                        for gi in 0..groups {
                            let go = &g[(r * groups + gi) * n..(r * groups + gi + 1) * n];
                            kernels::matmul_nt_acc(
                                go,
                                &wv[gi * k * n..(gi + 1) * k * n],
                                &mut da[r * width + gi * k..r * width + (gi + 1) * k],
                                1,
                                k,
                                n,
                            );
                        }
                    }
                    self.acc_vec(a, da);
                }
                if self.requires_grad(w) {
                    let mut dw = vec![T::zero(); groups * k * n];
                    let av = self.value(a);
                    for r in 0..rows {
                        for gi in 0..groups {
                            kernels::matmul_tn_acc(
                                &av[r * width + gi * k..r * width + (gi + 1) * k],
                                &g[(r * groups + gi) * n..(r * groups + gi + 1) * n],
                                &mut dw[gi * k * n..(gi + 1) * k * n],
                                1,
                                k,
                                n,
                            );
                        }
                    }
                    self.acc_vec(w, dw);
                }
            }
            Op::MaxRelative {
                x,
                s,
                batch,
                nodes,
                dim,
                argmax,
            } => {
                let (x, s, batch, nodes, dim) = (*x, *s, *batch, *nodes, *dim);
                let xv = self.value(x);
                let sv = self.value(s);
                let mut dx = vec![T::zero(); xv.len()];
                let mut ds = vec![T::zero(); sv.len()];
                for b in 0..batch {
                    let xo = b * nodes * dim;
                    let so = b * nodes * nodes;
                    for j in 0..nodes {
                        for d in 0..dim {
                            let o = xo + j * dim + d;
                            let gi = g[o];
                            if gi == T::zero() {
                                continue;
                            }
                            let i = argmax[o] as usize;
                            let sij = sv[so + i * nodes + j];
                            let xi = xv[xo + i * dim + d];
                            let xj = xv[o];
                            ds[so + i * nodes + j] = ds[so + i * nodes + j] + gi * (xi - xj);
                            dx[xo + i * dim + d] = dx[xo + i * dim + d] + gi * sij;
                            dx[o] = dx[o] - gi * sij;
                        }
                    }
                }
                self.acc_vec(x, dx);
                self.acc_vec(s, ds);
            }
            &Op::Conv2d { x, w, b, batch, geom } => {
                let (cols, pos) = (geom.cols(), geom.positions());
                let in_sz = geom.in_c * geom.in_h * geom.in_w;
                let out_sz = geom.out_c * pos;
                if let Some(b) = b {
                    if self.requires_grad(b) {
                        let mut db = vec![T::zero(); geom.out_c];
                        for bi in 0..batch {
                            for (o, d) in db.iter_mut().enumerate() {
                                let base = bi * out_sz + o * pos;
                                *d = *d + g[base..base + pos].iter().copied().sum::<T>();
                            }
                        }
                        self.acc_vec(b, db);
                    }
                }
                let need_x = self.requires_grad(x);
                let need_w = self.requires_grad(w);
                if need_x || need_w {
                    let xv = self.value(x);
                    let wv = self.value(w);
                    let mut col = vec![T::zero(); cols * pos];
                    let mut dcol = vec![T::zero(); cols * pos];
                    let mut dw = vec![T::zero(); if need_w { geom.out_c * cols } else { 0 }];
                    let mut dx = vec![T::zero(); if need_x { xv.len() } else { 0 }];
                    for bi in 0..batch {
                        let gb = &g[bi * out_sz..(bi + 1) * out_sz];
                        if need_w {
                            kernels::im2col(&xv[bi * in_sz..(bi + 1) * in_sz], &geom, &mut col);
                            // dw[o, q] += sum_p g[o, p] col[q, p]
                            kernels::matmul_nt_acc(gb, &col, &mut dw, geom.out_c, cols, pos);
                        }
                        if need_x {
                            dcol.fill(T::zero());
                            // dcol[q, p] = sum_o w[o, q] g[o, p]
                            kernels::matmul_tn_acc(wv, gb, &mut dcol, geom.out_c, cols, pos);
                            kernels::col2im(&dcol, &geom, &mut dx[bi * in_sz..(bi + 1) * in_sz]);
                        }
                    }
                    if need_w {
                        self.acc_vec(w, dw);
                    }
                    if need_x {
                        self.acc_vec(x, dx);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                batch,
                channels,
                spatial,
                xhat,
                inv_std,
                training,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let (batch, channels, spatial) = (*batch, *channels, *spatial);
                let mut dgamma = vec![T::zero(); channels];
                let mut dbeta = vec![T::zero(); channels];
                let mut sum_dh = vec![T::zero(); channels];
                let mut sum_dh_h = vec![T::zero(); channels];
                let gv = self.value(gamma).to_vec();
                for b in 0..batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * spatial;
                        for idx in base..base + spatial {
                            dgamma[c] = dgamma[c] + g[idx] * xhat[idx];
                            dbeta[c] = dbeta[c] + g[idx];
                            let dh = g[idx] * gv[c];
                            sum_dh[c] = sum_dh[c] + dh;
                            sum_dh_h[c] = sum_dh_h[c] + dh * xhat[idx];
                        }
                    }
                }
                if self.requires_grad(x) {
                    let m = T::lit((batch * spatial) as f64);
                    let mut dx = vec![T::zero(); g.len()];
                    for b in 0..batch {
                        for c in 0..channels {
                            let base = (b * channels + c) * spatial;
                            for idx in base..base + spatial {
                                let dh = g[idx] * gv[c];
                                dx[idx] = if *training {
                                    inv_std[c] * (dh - sum_dh[c] / m - xhat[idx] * sum_dh_h[c] / m)
                                } else {
                                    inv_std[c] * dh
                                };
                            }
                        }
                    }
                    self.acc_vec(x, dx);
                }
                self.acc_vec(gamma, dgamma);
                self.acc_vec(beta, dbeta);
            }
            Op::SoftCrossEntropy {
                logits,
                targets,
                probs,
                rows,
                classes,
            } => {
                let (logits, rows, classes) = (*logits, *rows, *classes);
                let scale = g[0] / T::lit(rows as f64);
                let mut dz = vec![T::zero(); rows * classes];
                for r in 0..rows {
                    let q = &targets[r * classes..(r + 1) * classes];
                    let mass: T = q.iter().copied().sum();
                    for c in 0..classes {
                        let idx = r * classes + c;
                        dz[idx] = scale * (probs[idx] * mass - q[c]);
                    }
                }
                self.acc_vec(logits, dz);
            }
        }
        self.nodes[i].op = op;
    }

    /// Gradients of every bound trainable parameter.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<T>)> {
        self.param_vars
            .iter()
            .filter_map(|(&id, &v)| {
                self.grads
                    .get(v.0)
                    .and_then(|g| g.clone())
                    .map(|g| (id, g))
            })
            .collect()
    }

    pub fn into_param_grads(self) -> Vec<(ParamId, Vec<T>)> {
        self.param_grads()
    }

    /// Running-statistics updates queued by training-mode batch norm.
    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Vec<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Scope and op name of the first node holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        (0..self.nodes.len()).find_map(|i| {
            let v = Var(i);
            if self.value(v).iter().any(|x| !x.is_finite()) {
                let n = &self.nodes[i];
                let scope = &self.scopes[n.scope];
                Some(if scope.is_empty() {
                    n.op.name().to_string()
                } else {
                    format!("{scope}/{}", n.op.name())
                })
            } else {
                None
            }
        })
    }
}

#[cfg(test)]
mod tests;
