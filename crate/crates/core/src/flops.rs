//! Analytic multiply-accumulate counts for one image.
//!
//! Only matrix products, convolutions and the max-relative aggregation are
//! counted; normalization, activations and residual additions are ignored.
//! Reported "FLOPs" follow the usual vision convention of one FLOP per MAC.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::error::Result;
use crate::grapher::{max_relative_aggregate, FFN_EXPANSION};
use crate::lrgc::{lrgc_forward, LrgcParams, TAU_INIT};
use crate::model::ModelConfig;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Parts, in the order they are reported.
pub const PARTS: [&str; 9] = [
    "stem",
    "w_in",
    "key_query",
    "logits",
    "aggregate",
    "update",
    "w_out",
    "ffn",
    "head",
];

/// Parts that make up graph construction and aggregation.
pub const GRAPH_PARTS: [&str; 3] = ["key_query", "logits", "aggregate"];

#[derive(Clone, Debug, PartialEq)]
pub struct FlopBreakdown {
    /// MACs per part, summed over all blocks.
    pub parts: BTreeMap<String, u64>,
}

impl FlopBreakdown {
    pub fn get(&self, part: &str) -> u64 {
        self.parts.get(part).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.parts.values().sum()
    }

    pub fn graph_total(&self) -> u64 {
        GRAPH_PARTS.iter().map(|p| self.get(p)).sum()
    }

    /// Folds per-scope counts from an instrumented forward pass
    /// (`stem.0`, `block3.logits`, `head`, ...) into parts, divided by `batch`.
    pub fn from_scope_counts(counts: &BTreeMap<String, u64>, batch: u64) -> Self {
        let mut parts = BTreeMap::new();
        for (scope, &macs) in counts {
            let part = match scope.split_once('.') {
                Some(("stem", _)) => "stem",
                Some((block, rest)) if block.starts_with("block") => rest,
                _ => scope.as_str(),
            };
            *parts.entry(part.to_string()).or_insert(0) += macs / batch.max(1);
        }
        FlopBreakdown { parts }
    }

    pub fn table(&self) -> String {
        let total = self.total().max(1) as f64;
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>16} {:>8}", "part", "MACs", "share");
        for p in PARTS {
            let m = self.get(p);
            let _ = writeln!(s, "{:<12} {:>16} {:>7.2}%", p, m, 100.0 * m as f64 / total);
        }
        let _ = writeln!(s, "{:<12} {:>16}", "graph", self.graph_total());
        let _ = writeln!(s, "{:<12} {:>16}", "total", self.total());
        let _ = writeln!(
            s,
            "convention: FLOPs = MACs = {:.3} G; counting multiply and add separately gives {:.3} G",
            self.total() as f64 / 1e9,
            2.0 * self.total() as f64 / 1e9
        );
        s
    }
}

pub fn flop_estimate(config: &ModelConfig) -> Result<FlopBreakdown> {
    config.validate()?;
    let extents = config.stem_extents()?;
    let mut stem = 0u64;
    let mut in_c = config.in_channels as u64;
    for (s, &(h, w)) in config.stem.iter().zip(&extents[1..]) {
        let k = s.kernel as u64;
        stem += (h * w) as u64 * s.out_channels as u64 * in_c * k * k;
        in_c = s.out_channels as u64;
    }
    let n = config.num_nodes()? as u64;
    let d = config.embed_dim as u64;
    let l = config.num_blocks as u64;
    let heads = config.update_heads as u64;
    let e = FFN_EXPANSION as u64;
    let per_block = [
        ("w_in", n * d * d),
        ("key_query", 2 * n * d * d),
        ("logits", n * n * d),
        ("aggregate", n * n * d),
        ("update", n * (2 * d) * (2 * d) / heads),
        ("w_out", n * 2 * d * d),
        ("ffn", 2 * n * d * e * d),
    ];
    let mut parts = BTreeMap::new();
    parts.insert("stem".to_string(), stem);
    for (name, macs) in per_block {
        parts.insert(name.to_string(), l * macs);
    }
    parts.insert("head".to_string(), d * d + d * config.num_classes as u64);
    Ok(FlopBreakdown { parts })
}

/// Graph construction plus aggregation for one `[1, n, d]` input, instrumented.
#[derive(Clone, Debug)]
pub struct GraphTiming {
    pub nodes: usize,
    pub dim: usize,
    /// Fastest of the timed repeats, in seconds.
    pub seconds: f64,
    /// MACs counted by the tape in the `key_query`, `logits` and `aggregate` scopes.
    pub counted_macs: u64,
}

/// Times the LRGC forward and the max-relative aggregation (`f32`), taking
/// the minimum over `repeats` runs after one warm-up run.
pub fn time_graph_portion(n: usize, d: usize, repeats: usize, seed: u64) -> Result<GraphTiming> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f32>::new();
    let p = LrgcParams::new(&mut store, "lrgc", d, TAU_INIT, &mut rng);
    let x = Tensor::from_fn([1, n, d], |_| rng.random_range(-1.0f32..1.0));
    let run = |x: &Tensor<f32>| -> Result<(f64, u64)> {
        let start = Instant::now();
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let att = lrgc_forward(&mut g, xv, &p)?;
        max_relative_aggregate(&mut g, xv, att.scores)?;
        let secs = start.elapsed().as_secs_f64();
        Ok((secs, g.mac_counts().values().sum()))
    };
    let (_, counted_macs) = run(&x)?;
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        best = best.min(run(&x)?.0);
    }
    Ok(GraphTiming {
        nodes: n,
        dim: d,
        seconds: best,
        counted_macs,
    })
}

/// Analytic MACs of [`time_graph_portion`]: keys and queries `2 n d^2`,
/// logits `n^2 d`, aggregation `n^2 d`.
pub fn graph_portion_macs(n: usize, d: usize) -> u64 {
    let (n, d) = (n as u64, d as u64);
    2 * n * d * d + 2 * n * n * d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::model::{Model, StemLayerSpec};
    use crate::tensor::Tensor;

    #[test]
    fn imagenet_total_near_one_and_a_half_billion() {
        let f = flop_estimate(&ModelConfig::imagenet()).unwrap();
        let g = f.total() as f64 / 1e9;
        assert!((1.4..1.7).contains(&g), "{g}");
    }

    #[test]
    fn desk_parts_all_positive() {
        let f = flop_estimate(&ModelConfig::desk()).unwrap();
        for p in PARTS {
            assert!(f.get(p) > 0, "{p}");
        }
        assert!(f.table().contains("convention"));
    }

    fn with_nodes(grid: usize, d: usize) -> ModelConfig {
        ModelConfig {
            height: grid * 2,
            width: grid * 2,
            in_channels: 3,
            embed_dim: d,
            num_blocks: 2,
            num_classes: 10,
            update_heads: 4,
            stem: vec![StemLayerSpec::new(d, 2, 2, 0)],
        }
    }

    #[test]
    fn quadratic_and_cubic_scaling() {
        // 4x4 -> 4x8 grid doubles N
        let a = flop_estimate(&with_nodes(4, 16)).unwrap();
        let mut wide = with_nodes(4, 16);
        wide.width *= 2;
        let b = flop_estimate(&wide).unwrap();
        assert_eq!(b.get("logits"), 4 * a.get("logits"));
        assert_eq!(b.get("aggregate"), 4 * a.get("aggregate"));
        // doubling both N and D with N = D
        let small = flop_estimate(&with_nodes(4, 16)).unwrap();
        let mut big = with_nodes(4, 32);
        big.width *= 2;
        let big = flop_estimate(&big).unwrap();
        let ratio = big.graph_total() as f64 / small.graph_total() as f64;
        assert!((ratio - 8.0).abs() < 0.8, "{ratio}");
    }

    #[test]
    fn timed_portion_counts_match_formula() {
        let t = time_graph_portion(12, 8, 1, 0).unwrap();
        assert_eq!(t.counted_macs, graph_portion_macs(12, 8));
        assert!(t.seconds > 0.0);
    }

    #[test]
    fn estimate_matches_instrumented_forward() {
        for cfg in [ModelConfig::desk(), with_nodes(3, 12)] {
            let model = Model::<f32>::new(cfg.clone(), 0).unwrap();
            let mut g = Graph::new(&model.store);
            let x = g.input(Tensor::zeros([2, 3, cfg.height, cfg.width]));
            model.params.forward(&mut g, x, false).unwrap();
            let counted = FlopBreakdown::from_scope_counts(&g.mac_counts(), 2);
            assert_eq!(counted, flop_estimate(&cfg).unwrap());
        }
    }
}
