//! Edge scores of learnable graph construction on a handful of random nodes:
//! raw key-query logits, the soft-thresholded scores, which edges survive,
//! and how raising tau prunes the graph.
//!
//! cargo run --example lrgc_scores

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vig_lrgc::lrgc::{edge_stats, lrgc_forward, score_upper_bound, LrgcParams};
use vig_lrgc::{Graph, ParamStore, Tensor};

fn main() -> vig_lrgc::Result<()> {
    let (n, d) = (6, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let p = LrgcParams::new(&mut store, "lrgc", d, -1.0, &mut rng);
    // larger weights than the 0.02 init so that logits spread around zero
    for id in [p.w_key, p.w_query] {
        let v = (0..d * d).map(|_| rng.random_range(-0.8..0.8)).collect();
        store.assign(id, v)?;
    }
    let x = Tensor::from_fn([n, d], |_| rng.random_range(-1.0..1.0));

    for tau in [-1.0, -0.2, 0.0, 0.4] {
        store.assign(p.tau, vec![tau])?;
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let att = lrgc_forward(&mut g, xv, &p)?;
        let scores = g.tensor(att.scores);
        if tau == -1.0 {
            println!("logits (row i = target node, column j = neighbor):");
            print_matrix(&g.tensor(att.logits));
        }
        println!(
            "\ntau = {tau:+.1}: avg neighbors {:.2} of {n}, scores in [0, {:.4})",
            edge_stats(&scores)?.avg_neighbors,
            score_upper_bound(tau)
        );
        print_matrix(&scores);
    }
    Ok(())
}

fn print_matrix(t: &Tensor<f64>) {
    let n = t.shape()[1];
    for row in t.data().chunks(n) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:+.3}")).collect();
        println!("  {}", cells.join(" "));
    }
}
