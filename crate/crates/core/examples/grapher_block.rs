//! One Grapher block followed by its feed-forward block on random node
//! features, checking permutation equivariance of the output and invariance
//! of the pooled representation.
//!
//! cargo run --example grapher_block

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vig_lrgc::grapher::{ffn_forward, grapher_forward, FfnParams, GrapherParams};
use vig_lrgc::layers::avgpool_all_nodes;
use vig_lrgc::{Graph, ParamStore, Tensor};

fn main() -> vig_lrgc::Result<()> {
    let (n, d) = (9, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::<f64>::new();
    let grapher = GrapherParams::new(&mut store, "grapher", d, &mut rng)?;
    let ffn = FfnParams::new(&mut store, "ffn", d, &mut rng);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();

    let run = |rows: &[f64]| -> vig_lrgc::Result<(Tensor<f64>, Tensor<f64>, f64)> {
        let mut g = Graph::new(&store);
        let xv = g.input(Tensor::new([1, n, d], rows.to_vec())?);
        let out = grapher_forward(&mut g, xv, &grapher)?;
        let y = ffn_forward(&mut g, out.out, &ffn)?;
        let pooled = avgpool_all_nodes(&mut g, y)?;
        let nb = vig_lrgc::lrgc::edge_stats(&g.tensor(out.attention.scores))?.avg_neighbors;
        Ok((g.tensor(y), g.tensor(pooled), nb))
    };

    let (y, pooled, nb) = run(&x)?;
    println!("output shape {:?}, pooled shape {:?}, avg neighbors {nb:.2}", y.shape(), pooled.shape());

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let xp: Vec<f64> = perm.iter().flat_map(|&i| x[i * d..(i + 1) * d].to_vec()).collect();
    let (yp, pooled_p, _) = run(&xp)?;
    let mut eq_err: f64 = 0.0;
    for (r, &i) in perm.iter().enumerate() {
        for k in 0..d {
            eq_err = eq_err.max((yp.data()[r * d + k] - y.data()[i * d + k]).abs());
        }
    }
    println!("permutation {perm:?}");
    println!("equivariance error  {eq_err:.2e}");
    println!("pooled invariance   {:.2e}", pooled.max_abs_diff(&pooled_p));
    Ok(())
}
