//! Trains the desk-scale model on the four-class synthetic quadrant task and
//! prints, per epoch, the average neighbors per node and tau of every layer.
//! With an output directory it also writes the metrics CSV, one SVG plot per
//! layer, the checkpoint and the manifest.
//!
//! cargo run --release --example train_synthetic -- [epochs] [out_dir]

use std::path::PathBuf;
use std::time::Instant;

use vig_lrgc::config::RunConfig;
use vig_lrgc::model::Model;
use vig_lrgc::train::train_loop;

fn main() -> vig_lrgc::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::synthetic();
    if let Some(e) = args.next().and_then(|a| a.parse().ok()) {
        cfg.train.epochs = e;
    }
    let out = args.next().map(PathBuf::from);
    if let Some(dir) = &out {
        cfg.write_manifest(dir)?;
    }
    let (train, test) = cfg.load_data()?;
    let mut model = Model::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    let start = Instant::now();
    let report = train_loop(&mut model, &train, &test, &cfg.train, out.as_deref(), |e| {
        let nb: Vec<String> = e.layers.iter().map(|l| format!("{:5.2}", l.avg_neighbors)).collect();
        let tau: Vec<String> = e.layers.iter().map(|l| format!("{:+.3}", l.tau)).collect();
        println!(
            "epoch {:>2}  loss {:.4}  top1 {:.3}  neighbors [{}]  tau [{}]  ({:.0}s)",
            e.epoch,
            e.train_loss,
            e.test.top1,
            nb.join(" "),
            tau.join(" "),
            start.elapsed().as_secs_f64()
        );
    })?;
    let first: Vec<String> = report.initial.iter().map(|s| format!("{:.2}", s.avg_neighbors)).collect();
    println!("first step neighbors [{}] of {}", first.join(" "), model.params.num_nodes);
    Ok(())
}
