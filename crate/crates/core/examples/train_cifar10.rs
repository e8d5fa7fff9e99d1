//! Trains the desk model on CIFAR-10 (binary version) with the default
//! recipe: mixup, flips, pad-and-crop, label smoothing, AdamW with a cosine
//! schedule. Pass a subset size to try it quickly.
//!
//! cargo run --release --example train_cifar10 -- <cifar-10-batches-bin> [epochs] [train_subset] [out_dir]

use std::path::PathBuf;

use vig_lrgc::config::RunConfig;
use vig_lrgc::model::Model;
use vig_lrgc::train::train_loop;

fn main() -> vig_lrgc::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(dir) = args.next() else {
        eprintln!("usage: train_cifar10 <cifar-10-batches-bin> [epochs] [train_subset] [out_dir]");
        std::process::exit(2);
    };
    let mut cfg = RunConfig::cifar10(&dir);
    if let Some(e) = args.next().and_then(|a| a.parse().ok()) {
        cfg.train.epochs = e;
    }
    if let Some(n) = args.next().and_then(|a| a.parse().ok()) {
        cfg.data.train_size = n;
    }
    let out = args.next().map(PathBuf::from);
    cfg.validate()?;
    let (train, test) = cfg.load_data()?;
    println!("{} training images, {} test images", train.len(), test.len());
    let mut model = Model::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    train_loop(&mut model, &train, &test, &cfg.train, out.as_deref(), |e| {
        let top5 = e.test.top5.map_or(String::new(), |t| format!("  top5 {t:.4}"));
        let nb: Vec<String> = e.layers.iter().map(|l| format!("{:.2}", l.avg_neighbors)).collect();
        println!(
            "epoch {:>3}  loss {:.4}  top1 {:.4}{top5}  neighbors [{}]",
            e.epoch,
            e.train_loss,
            e.test.top1,
            nb.join(" ")
        );
    })?;
    Ok(())
}
