//! Score-CAM map for one image, merged with its segmentation into a ranked
//! list of contributing street elements.
//!
//! `cargo run --release --example explain_and_rank -- image.png segmentation.png weights.bin [heatmap.png]`
//!
//! The weights must carry a trained head (`upd train-head`). Without
//! arguments a head is first fitted on synthetic scenes with a planted
//! texture, and one held-out positive scene is explained.

use rayon::prelude::*;

use upd_core::ranking::default_min_pixels;
use upd_core::scorecam::ExplainerConfig;
use upd_core::segmentation::load_segmentation;
use upd_core::swin::load_weights;
use upd_core::synth::{planted_dataset, planted_scene, PlantedConfig};
use upd_core::train::{train_head, LabeledFeature, TrainConfig};
use upd_core::{rank_factors, ImageRaster, ScoreCam, SwinConfig, SwinModel};

fn synthetic_model(scenes: &PlantedConfig) -> upd_core::Result<SwinModel> {
    let mut model = SwinModel::from_seed(SwinConfig {
        patch_size: 2,
        embed_dim: 16,
        num_heads: [1, 2, 4, 8],
        window_size: 4,
        ..SwinConfig::default()
    })?;
    let data: Vec<LabeledFeature> = planted_dataset(scenes)?
        .par_iter()
        .map(|s| -> upd_core::Result<LabeledFeature> { LabeledFeature::new(model.forward(&s.image)?.pooled, s.label) })
        .collect::<upd_core::Result<_>>()?;
    let trained = train_head(&data, &TrainConfig::default(), &model.weights.head.fc)?;
    println!("head fitted on {} scenes, train accuracy {:.3}", data.len(), trained.train_accuracy);
    model.weights.head.fc = trained.head;
    Ok(model)
}

fn main() -> upd_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (image, seg, model) = match &args[..] {
        [img, seg, weights, ..] => {
            let image = ImageRaster::load_png(img)?;
            let seg = load_segmentation(seg, Some((image.height(), image.width())), None)?;
            let (config, weights, _) = load_weights(weights)?;
            (image, seg, SwinModel { config, weights })
        }
        _ => {
            let scenes = PlantedConfig { size: 128, images: 100, ..PlantedConfig::default() };
            let model = synthetic_model(&scenes)?;
            let s = planted_scene(&scenes, 101)?;
            println!("held-out scene, texture planted in {}", s.planted.expect("odd scenes are positive"));
            (s.image, s.segmentation, model)
        }
    };

    let detail = ScoreCam::new(ExplainerConfig::default()).explain_detailed(&image, &model)?;
    println!("scored {} channels, baseline p(UPD) {:.4}", detail.channels.len(), detail.baseline_score);
    if let Some(path) = args.get(3) {
        detail.map.save_png(path)?;
    }

    let ranking = rank_factors(&seg, &detail.map, default_min_pixels(image.height(), image.width()))?;
    for (i, e) in ranking.entries.iter().enumerate() {
        println!("{:>2}. {:<14} density {:.4}  pixels {}", i + 1, e.class.name(), e.density, e.pixel_count);
    }
    Ok(())
}
