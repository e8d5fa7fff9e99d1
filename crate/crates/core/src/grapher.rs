//! Grapher block (graph construction, max-relative aggregation, multi-head
//! update, residual) and the feed-forward block that follows it.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{GroupedLinear, Linear};
use crate::lrgc::{lrgc_forward, AttentionMatrix, LrgcParams, TAU_INIT};
use crate::params::ParamStore;
use crate::tensor::Element;

pub const UPDATE_HEADS: usize = 4;
pub const FFN_EXPANSION: usize = 4;

#[derive(Clone, Debug)]
pub struct GrapherParams {
    pub w_in: Linear,
    pub lrgc: LrgcParams,
    /// Grouped `2D -> 2D` map over `concat(x', x'')`.
    pub w_update: GroupedLinear,
    pub w_out: Linear,
    pub dim: usize,
}

impl GrapherParams {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::with_heads(store, name, dim, UPDATE_HEADS, rng)
    }

    pub fn with_heads<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w_in = Linear::new(store, &format!("{name}.w_in"), dim, dim, true, rng);
        let lrgc = LrgcParams::new(store, &format!("{name}.lrgc"), dim, TAU_INIT, rng);
        let w_update = GroupedLinear::new(store, &format!("{name}.w_update"), 2 * dim, 2 * dim, heads, rng)?;
        let w_out = Linear::new(store, &format!("{name}.w_out"), 2 * dim, dim, true, rng);
        Ok(GrapherParams {
            w_in,
            lrgc,
            w_update,
            w_out,
            dim,
        })
    }
}

#[derive(Clone, Debug)]
pub struct FfnParams {
    pub w1: Linear,
    pub w2: Linear,
}

impl FfnParams {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        FfnParams {
            w1: Linear::new(store, &format!("{name}.w1"), dim, FFN_EXPANSION * dim, true, rng),
            w2: Linear::new(store, &format!("{name}.w2"), FFN_EXPANSION * dim, dim, true, rng),
        }
    }
}

/// `x''[j] = max_i scores[i][j] * (x'[i] - x'[j])`, featurewise, over every
/// candidate source including `j` itself.
pub fn max_relative_aggregate<T: Element>(g: &mut Graph<'_, T>, x_prime: Var, scores: Var) -> Result<Var> {
    g.scoped("aggregate", |g| g.max_relative(x_prime, scores))
}

#[derive(Clone, Copy, Debug)]
pub struct GrapherOutput {
    pub out: Var,
    pub attention: AttentionMatrix,
}

/// `x + W_out(GELU(W_update(concat(x', x''))))` with `x' = W_in(x)`.
pub fn grapher_forward<T: Element>(g: &mut Graph<'_, T>, x: Var, p: &GrapherParams) -> Result<GrapherOutput> {
    let shape = g.shape(x);
    if shape.len() < 2 || shape[shape.len() - 1] != p.dim {
        return Err(Error::ShapeMismatch {
            op: "grapher_forward",
            lhs: shape.to_vec(),
            rhs: vec![p.dim],
        });
    }
    let xp = g.scoped("w_in", |g| p.w_in.forward(g, x))?;
    let attention = lrgc_forward(g, xp, &p.lrgc)?;
    let xpp = max_relative_aggregate(g, xp, attention.scores)?;
    let cat = g.concat_last(xp, xpp)?;
    let upd = g.scoped("update", |g| p.w_update.forward(g, cat))?;
    let act = g.gelu(upd)?;
    let y = g.scoped("w_out", |g| p.w_out.forward(g, act))?;
    let out = g.add(y, x)?;
    Ok(GrapherOutput { out, attention })
}

/// `GELU(x W1) W2 + x`.
pub fn ffn_forward<T: Element>(g: &mut Graph<'_, T>, x: Var, p: &FfnParams) -> Result<Var> {
    g.scoped("ffn", |g| {
        let h = p.w1.forward(g, x)?;
        let h = g.gelu(h)?;
        let y = p.w2.forward(g, h)?;
        g.add(y, x)
    })
}
