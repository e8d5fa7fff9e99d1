//! What one training batch goes through before the model sees it: flips,
//! pad-and-crop and mixup, with the resulting soft targets.
//!
//! cargo run --example augment_pipeline

use vig_lrgc::data::{synthetic_quadrant, AugmentConfig, Augmenter, Split};

fn main() -> vig_lrgc::Result<()> {
    let data = synthetic_quadrant(4, 16, 5, Split::Train)?;
    let (mut x, labels) = data.batch::<f32>(&[0, 1, 2, 3]);
    let mut aug = Augmenter::new(AugmentConfig {
        mixup_prob: 1.0,
        seed: 9,
        ..AugmentConfig::default()
    })?;
    let shape = [4, data.channels, data.height, data.width];
    let soft = aug.apply(x.data_mut(), shape, &labels, data.num_classes);
    println!("labels {labels:?}");
    for (i, row) in soft.chunks(data.num_classes).enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("sample {i}: soft target [{}]", cells.join(" "));
    }
    Ok(())
}
