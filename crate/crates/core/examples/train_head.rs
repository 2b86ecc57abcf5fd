//! Fit the linear classification head on frozen backbone features of
//! synthetic scenes and print the loss curve.
//!
//! `cargo run --release --example train_head -- [epochs]`

use rayon::prelude::*;

use upd_core::synth::{planted_dataset, PlantedConfig};
use upd_core::train::{train_head, LabeledFeature, TrainConfig};
use upd_core::{SwinConfig, SwinModel};

fn main() -> upd_core::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let scenes = planted_dataset(&PlantedConfig { size: 64, images: 80, ..PlantedConfig::default() })?;
    let model = SwinModel::from_seed(SwinConfig {
        patch_size: 2,
        embed_dim: 16,
        num_heads: [1, 2, 4, 8],
        window_size: 4,
        ..SwinConfig::default()
    })?;
    let data: Vec<LabeledFeature> = scenes
        .par_iter()
        .map(|s| -> upd_core::Result<LabeledFeature> { LabeledFeature::new(model.forward(&s.image)?.pooled, s.label) })
        .collect::<upd_core::Result<_>>()?;

    let cfg = TrainConfig { epochs, learning_rate: 1e-2, ..TrainConfig::default() };
    let out = train_head(&data, &cfg, &model.weights.head.fc)?;
    println!("{} train / {} validation images", out.train_indices.len(), out.val_indices.len());
    for e in out.curve.iter().filter(|e| e.epoch % 10 == 0 || e.epoch == epochs) {
        let val = e.val_loss.map_or(String::from("-"), |v| format!("{v:.4}"));
        let acc = e.val_accuracy.map_or(String::from("-"), |v| format!("{v:.3}"));
        println!("epoch {:>4}  train loss {:.4}  val loss {val}  val acc {acc}", e.epoch, e.train_loss);
    }
    println!("final train accuracy {:.3}", out.train_accuracy);
    Ok(())
}
