//! Classify one PNG with a seed-initialised backbone, or with weights saved
//! by `upd init-weights` / `upd train-head`.
//!
//! `cargo run --release --example detect_image -- image.png [weights.bin]`
//!
//! Without arguments a synthetic 224x224 scene is classified.

use upd_core::swin::{load_weights, SwinModel};
use upd_core::synth::{planted_scene, PlantedConfig};
use upd_core::{ImageRaster, SwinConfig};

fn main() -> upd_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let image = match args.next() {
        Some(path) => ImageRaster::load_png(path)?,
        None => planted_scene(&PlantedConfig { size: 224, ..PlantedConfig::default() }, 1)?.image,
    };
    let model = match args.next() {
        Some(path) => {
            let (config, weights, trained) = load_weights(path)?;
            if !trained {
                eprintln!("weights carry no trained head; probabilities are uninformative");
            }
            SwinModel { config, weights }
        }
        None => SwinModel::from_seed(SwinConfig::default())?,
    };

    let trace = model.forward(&image)?;
    for (i, g) in trace.stages.iter().enumerate() {
        println!("stage {}: {}x{}x{}", i + 1, g.rows(), g.cols(), g.dim());
    }
    println!("p(non-UPD) {:.4}  p(UPD) {:.4}", trace.probabilities[0], trace.probabilities[1]);
    println!("label {}", if trace.predicted_label() == 1 { "UPD" } else { "non-UPD" });
    Ok(())
}
