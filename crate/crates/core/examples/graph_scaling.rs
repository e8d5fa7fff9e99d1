//! Wall time of graph construction plus aggregation as the node count grows
//! with the embedding width held equal to it (N = D), next to the tape's MAC
//! count. Doubling both should cost about 8x once the cubic terms dominate.
//!
//! cargo run --release --example graph_scaling -- [repeats]

use vig_lrgc::flops::{graph_portion_macs, time_graph_portion};

fn main() -> vig_lrgc::Result<()> {
    let repeats = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    println!("{:>5} {:>14} {:>12} {:>8} {:>8}", "N=D", "MACs", "seconds", "t ratio", "MAC ratio");
    let mut prev: Option<(f64, u64)> = None;
    for n in [16, 32, 64, 128, 256] {
        let t = time_graph_portion(n, n, repeats, 0)?;
        assert_eq!(t.counted_macs, graph_portion_macs(n, n));
        let (tr, mr) = prev.map_or((String::new(), String::new()), |(s, m)| {
            (
                format!("{:.2}", t.seconds / s),
                format!("{:.2}", t.counted_macs as f64 / m as f64),
            )
        });
        println!("{n:>5} {:>14} {:>12.6} {tr:>8} {mr:>8}", t.counted_macs, t.seconds);
        prev = Some((t.seconds, t.counted_macs));
    }
    Ok(())
}
