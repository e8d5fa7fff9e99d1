//! Multiply-accumulate breakdown of the desk and ImageNet configurations,
//! plus how the attention terms react to doubling the node count.
//!
//! cargo run --example flops_report

use vig_lrgc::flops::flop_estimate;
use vig_lrgc::model::ModelConfig;

fn main() -> vig_lrgc::Result<()> {
    for (name, cfg) in [("desk", ModelConfig::desk()), ("imagenet", ModelConfig::imagenet())] {
        println!("== {name}: {} nodes, embed_dim {}, {} blocks", cfg.num_nodes()?, cfg.embed_dim, cfg.num_blocks);
        print!("{}", flop_estimate(&cfg)?.table());
        println!();
    }

    let base = ModelConfig::desk();
    let mut wide = base.clone();
    wide.width *= 2;
    let (a, b) = (flop_estimate(&base)?, flop_estimate(&wide)?);
    println!(
        "doubling N ({} -> {}): logits x{}, aggregate x{}, ffn x{}",
        base.num_nodes()?,
        wide.num_nodes()?,
        b.get("logits") / a.get("logits"),
        b.get("aggregate") / a.get("aggregate"),
        b.get("ffn") / a.get("ffn")
    );
    Ok(())
}
