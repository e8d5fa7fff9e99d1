//! Per-layer graph telemetry for one synthetic image: average neighbors,
//! tau, and the score range. A freshly initialized model starts from the
//! full graph. Pass a checkpoint (for example one written by
//! `train_synthetic`) to inspect a trained model instead.
//!
//! cargo run --example inspect_graph -- [checkpoint]

use vig_lrgc::checkpoint::load_checkpoint;
use vig_lrgc::config::RunConfig;
use vig_lrgc::lrgc::{edge_stats, score_upper_bound};
use vig_lrgc::model::Model;

fn main() -> vig_lrgc::Result<()> {
    let mut cfg = RunConfig::synthetic();
    let model: Model<f32> = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(path)?,
        None => Model::new(cfg.model.clone(), 0)?,
    };
    cfg.data.train_size = 2;
    cfg.data.test_size = 1;
    let (_, test) = cfg.load_data()?;
    let (x, labels) = test.batch::<f32>(&[0]);
    let (stats, scores) = model.inspect(&x)?;
    println!("label {}, {} nodes", labels[0], model.params.num_nodes);
    for (s, m) in stats.iter().zip(&scores) {
        let v = m.to_f64_vec();
        let max = v.iter().copied().fold(0.0, f64::max);
        let degrees = edge_stats(m)?.degree_per_node;
        println!(
            "layer {}: avg neighbors {:6.2}  tau {:+.4}  max score {:.4} < {:.4}  min degree {}",
            s.layer,
            s.avg_neighbors,
            s.tau,
            max,
            score_upper_bound(s.tau),
            degrees.iter().copied().fold(f64::INFINITY, f64::min)
        );
    }
    Ok(())
}
