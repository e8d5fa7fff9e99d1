//! Slice-level forward and backward kernels used by the tape.
//!
//! Everything here is row-major and allocation-light; shape checking is done
//! by the caller.

use crate::tensor::Element;

/// `out[r, :] += a[r, :] . b` for `a: rows x k`, `b: k x n`.
pub fn matmul_acc<T: Element>(a: &[T], b: &[T], out: &mut [T], rows: usize, k: usize, n: usize) {
    for r in 0..rows {
        let arow = &a[r * k..(r + 1) * k];
        let orow = &mut out[r * n..(r + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[r, p] += sum_j g[r, j] * b[p, j]` (gradient of `a` in `a . b`).
pub fn matmul_nt_acc<T: Element>(g: &[T], b: &[T], out: &mut [T], rows: usize, k: usize, n: usize) {
    for r in 0..rows {
        let grow = &g[r * n..(r + 1) * n];
        let orow = &mut out[r * k..(r + 1) * k];
        for (p, o) in orow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            *o = *o + dot(grow, brow);
        }
    }
}

/// `out[p, j] += sum_r a[r, p] * g[r, j]` (gradient of `b` in `a . b`).
pub fn matmul_tn_acc<T: Element>(a: &[T], g: &[T], out: &mut [T], rows: usize, k: usize, n: usize) {
    for r in 0..rows {
        let arow = &a[r * k..(r + 1) * k];
        let grow = &g[r * n..(r + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
}

#[inline]
pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

pub const GELU_COEFF: f64 = 0.044715;

#[inline]
pub fn sqrt_2_over_pi() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

#[inline]
pub fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn gelu<T: Element>(x: T) -> T {
    let c = T::lit(sqrt_2_over_pi());
    let u = c * (x + T::lit(GELU_COEFF) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<T: Element>(x: T) -> T {
    let c = T::lit(sqrt_2_over_pi());
    let k = T::lit(GELU_COEFF);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}

/// Geometry of a 2-d cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn cols(&self) -> usize {
        self.in_c * self.k_h * self.k_w
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one image `[C, H, W]` into `[C*kh*kw, Ho*Wo]`.
pub fn im2col<T: Element>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let pos = g.positions();
    for c in 0..g.in_c {
        for ki in 0..g.k_h {
            for kj in 0..g.k_w {
                let row = (c * g.k_h + ki) * g.k_w + kj;
                let dst = &mut col[row * pos..(row + 1) * pos];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        dst[oy * g.out_w + ox] = if iy >= 0
                            && (iy as usize) < g.in_h
                            && ix >= 0
                            && (ix as usize) < g.in_w
                        {
                            x[(c * g.in_h + iy as usize) * g.in_w + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column buffer back onto an image gradient.
pub fn col2im<T: Element>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let pos = g.positions();
    for c in 0..g.in_c {
        for ki in 0..g.k_h {
            for kj in 0..g.k_w {
                let row = (c * g.k_h + ki) * g.k_w + kj;
                let src = &col[row * pos..(row + 1) * pos];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.in_h {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.in_w {
                            continue;
                        }
                        let idx = (c * g.in_h + iy as usize) * g.in_w + ix as usize;
                        dx[idx] = dx[idx] + src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

/// Row-major strides of a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each flat index of the permuted output, the flat index it reads from the input.
pub fn permute_index(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let n: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..n {
        let src: usize = idx
            .iter()
            .zip(perm)
            .map(|(&i, &p)| i * in_strides[p])
            .sum();
        map.push(src);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}
