//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::Element;

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Steps taken so far.
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update from `grads`. Parameters without an entry are left alone;
    /// only [`ParamKind::Weight`] entries are decayed.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Vec<T>)]) -> Result<()> {
        for (id, g) in grads {
            let numel = store.tensor(*id).numel();
            if g.len() != numel {
                return Err(Error::ShapeMismatch {
                    op: "adamw_step",
                    lhs: vec![numel],
                    rhs: vec![g.len()],
                });
            }
            if store.get(*id).kind == ParamKind::Buffer {
                return Err(Error::Config(format!("`{}` is a buffer, not a trainable parameter", store.get(*id).name)));
            }
        }
        if self.m.len() < store.len() {
            self.m.resize(store.len(), Vec::new());
            self.v.resize(store.len(), Vec::new());
        }
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::lit(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for (id, g) in grads {
            let decay = if store.get(*id).kind == ParamKind::Weight {
                T::lit(self.weight_decay)
            } else {
                T::zero()
            };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            if m.len() != g.len() {
                *m = vec![T::zero(); g.len()];
                *v = vec![T::zero(); g.len()];
            }
            let p = store.tensor_mut(*id).data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] - lr * (mhat / (vhat.sqrt() + eps) + decay * p[i]);
            }
        }
        Ok(())
    }
}
