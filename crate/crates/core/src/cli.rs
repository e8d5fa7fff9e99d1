//! Command-line front end. `main.rs` only forwards to [`run`].
//!
//! Exit codes: 0 success, 1 verification failure or diverged training,
//! 2 usage or configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::autodiff::Fault;
use crate::checkpoint::load_checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::error::{Error, Result};
use crate::flops::flop_estimate;
use crate::lrgc::score_upper_bound;
use crate::model::{Model, ModelConfig};
use crate::train::{evaluate, train_loop};
use crate::verify::{model_grad_check, GradCheckConfig, GRAD_CHECK_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vig-lrgc", version, about = "Vision graph network with learnable graph construction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics, plots, checkpoint and manifest.
    Train(TrainArgs),
    /// Report test accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Finite-difference check of every parameter group in 64-bit.
    GradCheck(GradCheckArgs),
    /// Per-layer neighbor counts, thresholds and score histogram for one image.
    InspectGraph(InspectArgs),
    /// Multiply-accumulate breakdown of a configuration.
    Flops(FlopsArgs),
}

/// Flags shared by every command.
#[derive(Debug, Args, Clone, Default)]
pub struct RunArgs {
    /// Configuration file of `section.key = value` lines.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (the manifest is written here).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Use the four-class synthetic quadrant task.
    #[arg(long, conflicts_with = "data")]
    pub synthetic: bool,
    /// Directory with the CIFAR-10 binary batches.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Single-threaded execution without data-loading overlap. This is the
    /// only execution mode, so the flag is accepted and recorded.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Coordinates sampled per parameter tensor (0 checks all).
    #[arg(long, default_value_t = 32)]
    pub coords: usize,
    /// Print the coordinates excluded for sitting on a kink.
    #[arg(long)]
    pub list_kinks: bool,
    #[arg(long, hide = true, value_name = "FAULT")]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint to inspect; without it a freshly initialized model is used.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Index of the test image to feed.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    /// Write the score matrix of this layer as CSV.
    #[arg(long, value_name = "LAYER")]
    pub dump_layer: Option<usize>,
    /// Destination of `--dump-layer` (default: scores_layer{L}.csv in --out or the working directory).
    #[arg(long, value_name = "PATH")]
    pub dump_path: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Model preset (desk or imagenet), applied before --config and --set.
    #[arg(long)]
    pub preset: Option<String>,
}

/// Resolves defaults, the config file, `--data`/`--synthetic`, `--set`,
/// `--epochs` and `--seed`, in that order.
pub fn resolve_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.data {
        Some(dir) => RunConfig::cifar10(dir),
        None => RunConfig::synthetic(),
    };
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    if let Some(dir) = &args.data {
        if cfg.data.source != DataSource::Cifar10 {
            return Err(Error::Config("--data given but the configuration selects the synthetic task".into()));
        }
        cfg.data.dir = Some(dir.clone());
    }
    if args.synthetic && cfg.data.source != DataSource::Synthetic {
        return Err(Error::Config("--synthetic given but the configuration selects CIFAR-10".into()));
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn write_manifest_if(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    if let Some(dir) = out {
        let path = cfg.write_manifest(dir)?;
        println!("manifest: {}", path.display());
    }
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } | Error::NonFinite { .. } => EXIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::GradCheck(a) => cmd_grad_check(&a),
        Command::InspectGraph(a) => cmd_inspect_graph(&a),
        Command::Flops(a) => cmd_flops(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let run = &args.run;
    if run.config.is_none() && run.data.is_none() && !run.synthetic {
        return Err(Error::Config("train needs --synthetic, --data DIR or --config PATH".into()));
    }
    let cfg = resolve_config(run)?;
    cfg.validate()?;
    let out = run.out.clone().unwrap_or_else(|| PathBuf::from("runs/train"));
    cfg.write_manifest(&out)?;
    let (train, test) = cfg.load_data()?;
    let mut model = Model::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    println!(
        "training on {} images ({} test), {} nodes, {} epochs -> {}",
        train.len(),
        test.len(),
        model.params.num_nodes,
        cfg.train.epochs,
        out.display()
    );
    let report = train_loop(&mut model, &train, &test, &cfg.train, Some(&out), |e| {
        let nb: Vec<String> = e.layers.iter().map(|l| format!("{:.2}", l.avg_neighbors)).collect();
        println!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  test top1 {:.4}  neighbors [{}]",
            e.epoch,
            e.lr,
            e.train_loss,
            e.test.top1,
            nb.join(" ")
        );
    })?;
    if let Some(last) = report.epochs.last() {
        println!("final test top1 {:.4}", last.test.top1);
    }
    Ok(EXIT_OK)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let mut cfg = resolve_config(&args.run)?;
    let model: Model<f32> = load_checkpoint(&args.checkpoint)?;
    cfg.model = model.config.clone();
    cfg.validate()?;
    write_manifest_if(&cfg, args.run.out.as_deref())?;
    let (_, test) = cfg.load_data()?;
    let r = evaluate(&model, &test, cfg.train.eval_batch_size)?;
    print!("test images {}  top1 {:.4}", test.len(), r.top1);
    if let Some(t5) = r.top5 {
        print!("  top5 {t5:.4}");
    }
    println!("  loss {:.4}", r.loss);
    Ok(EXIT_OK)
}

pub fn parse_fault(name: &str) -> Result<Fault> {
    match name {
        "tanh-sign" => Ok(Fault::TanhBackwardSignFlip),
        other => Err(Error::Config(format!("unknown fault `{other}`"))),
    }
}

pub fn cmd_grad_check(args: &GradCheckArgs) -> Result<i32> {
    let cfg = resolve_config(&args.run)?;
    cfg.model.validate()?;
    write_manifest_if(&cfg, args.run.out.as_deref())?;
    let fault = args.inject_fault.as_deref().map(parse_fault).transpose()?;
    let mut check = GradCheckConfig::new(cfg.model.clone(), cfg.train.seed).with_fault(fault);
    check.coords_per_param = (args.coords > 0).then_some(args.coords);
    let report = model_grad_check(&check)?;
    for g in &report.groups {
        println!(
            "{:<36} checked {:>5}  kinks {:>3}  max rel err {:.3e}",
            g.name, g.checked, g.excluded, g.max_rel_error
        );
    }
    if args.list_kinks {
        println!("excluded kink coordinates: {}", report.kinks.len());
        for k in &report.kinks {
            println!("  {}[{}]", k.param, k.index);
        }
    }
    let max = report.max_rel_error();
    if report.passes(GRAD_CHECK_TOL) {
        println!("PASS  max relative error {max:.3e} < {GRAD_CHECK_TOL:.0e}");
        Ok(EXIT_OK)
    } else {
        let w = report.worst().expect("a failing report has a group");
        println!(
            "FAIL  max relative error {max:.3e} >= {GRAD_CHECK_TOL:.0e}; worst {}[{}]: analytic {:.6e}, numeric {:.6e}",
            w.name, w.worst_index, w.worst_analytic, w.worst_numeric
        );
        Ok(EXIT_FAILURE)
    }
}

/// Bins `(0, bound)` into `bins` equal buckets; zeros are counted separately.
pub fn score_histogram(scores: &[f64], bound: f64, bins: usize) -> (usize, Vec<usize>) {
    let bins = bins.max(1);
    let mut counts = vec![0; bins];
    let mut zeros = 0;
    for &s in scores {
        if s <= 0.0 {
            zeros += 1;
        } else {
            let b = ((s / bound) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
    }
    (zeros, counts)
}

pub fn scores_csv(scores: &[f64], n: usize) -> String {
    let mut s = String::new();
    for row in scores.chunks(n) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

pub fn cmd_inspect_graph(args: &InspectArgs) -> Result<i32> {
    let mut cfg = resolve_config(&args.run)?;
    let model: Model<f32> = match &args.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => Model::new(cfg.model.clone(), cfg.train.seed)?,
    };
    cfg.model = model.config.clone();
    write_manifest_if(&cfg, args.run.out.as_deref())?;
    let layers = model.params.blocks.len();
    if let Some(l) = args.dump_layer {
        if l >= layers {
            return Err(Error::OutOfRange {
                what: "layer",
                index: l,
                len: layers,
            });
        }
    }
    let mut images = cfg.clone();
    if images.data.source == DataSource::Synthetic {
        images.data.train_size = 2;
        images.data.test_size = images.data.test_size.max(args.sample + 1);
    }
    let (_, test) = images.load_data()?;
    if args.sample >= test.len() {
        return Err(Error::OutOfRange {
            what: "sample",
            index: args.sample,
            len: test.len(),
        });
    }
    let (x, labels) = test.batch::<f32>(&[args.sample]);
    let (stats, scores) = model.inspect(&x)?;
    let n = model.params.num_nodes;
    println!("sample {} (label {}), {n} nodes, full graph = {n} neighbors", args.sample, labels[0]);
    println!("{:<6} {:>14} {:>10} {:>10}", "layer", "avg_neighbors", "tau", "bound");
    for s in &stats {
        println!(
            "{:<6} {:>14.4} {:>10.5} {:>10.5}",
            s.layer,
            s.avg_neighbors,
            s.tau,
            score_upper_bound(s.tau)
        );
    }
    for (s, m) in stats.iter().zip(&scores) {
        let v = m.to_f64_vec();
        let bound = score_upper_bound(s.tau);
        let (zeros, counts) = score_histogram(&v, bound, args.bins);
        let cells: Vec<String> = counts.iter().map(usize::to_string).collect();
        println!("layer {} histogram: zero {zeros} | {}", s.layer, cells.join(" "));
    }
    if let Some(l) = args.dump_layer {
        let path = args.dump_path.clone().unwrap_or_else(|| {
            let name = format!("scores_layer{l}.csv");
            args.run.out.as_ref().map_or_else(|| PathBuf::from(&name), |d| d.join(&name))
        });
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, scores_csv(&scores[l].to_f64_vec(), n)).map_err(|e| Error::io(&path, e))?;
        println!("wrote {}", path.display());
    }
    Ok(EXIT_OK)
}

pub fn cmd_flops(args: &FlopsArgs) -> Result<i32> {
    let mut cfg = RunConfig::synthetic();
    if let Some(p) = &args.preset {
        cfg.model = ModelConfig::preset(p)?;
    }
    if let Some(path) = &args.run.config {
        cfg.apply_file(path)?;
    }
    for kv in &args.run.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    write_manifest_if(&cfg, args.run.out.as_deref())?;
    let f = flop_estimate(&cfg.model)?;
    println!(
        "{} nodes, embed_dim {}, {} blocks, per image",
        cfg.model.num_nodes()?,
        cfg.model.embed_dim,
        cfg.model.num_blocks
    );
    print!("{}", f.table());
    Ok(EXIT_OK)
}
