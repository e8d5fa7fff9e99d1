//! Saves a model, loads it back, and confirms that every stored value and the
//! predictions are bit-identical. Also shows the error for a checkpoint whose
//! shapes do not fit the model.
//!
//! cargo run --example checkpoint_roundtrip

use vig_lrgc::checkpoint::{load_checkpoint, load_checkpoint_into, read_checkpoint, save_checkpoint};
use vig_lrgc::model::{Model, ModelConfig};
use vig_lrgc::Tensor;

fn main() -> vig_lrgc::Result<()> {
    let dir = std::env::temp_dir().join(format!("vig-lrgc-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| vig_lrgc::Error::Config(e.to_string()))?;
    let path = dir.join("desk.ckpt");

    let model = Model::<f32>::new(ModelConfig::desk(), 42)?;
    save_checkpoint(&model, &path)?;
    let ckpt = read_checkpoint(&path)?;
    println!("{} tensors, config:\n{}", ckpt.tensors.len(), ckpt.config.to_kv_text());

    let back: Model<f32> = load_checkpoint(&path)?;
    let images = Tensor::from_fn([2, 3, 32, 32], |i| ((i % 17) as f32 - 8.0) / 8.0);
    let (a, b) = (model.predict(&images)?, back.predict(&images)?);
    let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("predictions bit-identical after reload: {same}");

    let mut narrow_cfg = ModelConfig::desk();
    narrow_cfg.embed_dim = 16;
    narrow_cfg.stem[2].out_channels = 16;
    let mut narrow = Model::<f32>::new(narrow_cfg, 0)?;
    match load_checkpoint_into(&path, &mut narrow) {
        Err(e) => println!("loading into a narrower model: {e}"),
        Ok(()) => println!("unexpectedly loaded"),
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
