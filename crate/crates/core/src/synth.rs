//! Synthetic street scenes with a planted disorder texture.
//!
//! Each scene is split into four rectangles at a random point, every
//! rectangle painted with the flat colour of a distinct semantic class.
//! Positive scenes carry a high-contrast checkerboard inside one of the
//! rectangles, so the planted class is the known ground-truth top factor.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ranking::{default_min_pixels, rank_factors};
use crate::raster::ImageRaster;
use crate::rng::keyed_rng;
use crate::scorecam::{ExplainerConfig, ScoreCam};
use crate::segmentation::{SegmentationMap, StreetClass};
use crate::swin::{SwinConfig, SwinModel};
use crate::train::{train_head, LabeledFeature, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub size: usize,
    pub images: usize,
    /// Every `positive_every`-th scene (by index) is positive.
    pub positive_every: usize,
    /// Side of one checkerboard square in pixels.
    pub texture_cell: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            size: 64,
            images: 200,
            positive_every: 2,
            texture_cell: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedScene {
    pub image_id: String,
    pub image: ImageRaster,
    pub segmentation: SegmentationMap,
    pub label: u8,
    pub planted: Option<StreetClass>,
    /// Classes of the four rectangles, largest area first.
    pub classes: Vec<StreetClass>,
}

fn class_colour(class: StreetClass) -> [f64; 3] {
    match class {
        StreetClass::Sidewalk => [0.55, 0.45, 0.50],
        StreetClass::Building => [0.40, 0.40, 0.40],
        StreetClass::Vehicle => [0.30, 0.30, 0.55],
        StreetClass::Fence => [0.55, 0.50, 0.45],
        StreetClass::Motorcycle => [0.45, 0.30, 0.40],
        StreetClass::Person => [0.60, 0.35, 0.35],
        StreetClass::Pole => [0.50, 0.50, 0.50],
        StreetClass::Road => [0.45, 0.40, 0.45],
        StreetClass::Sky => [0.45, 0.55, 0.65],
        StreetClass::TrafficSign => [0.60, 0.60, 0.35],
        StreetClass::Vegetation => [0.35, 0.50, 0.30],
        StreetClass::Wall => [0.50, 0.45, 0.40],
    }
}

pub fn planted_scene(cfg: &PlantedConfig, index: usize) -> Result<PlantedScene> {
    let n = cfg.size;
    if n < 16 || cfg.texture_cell == 0 || cfg.positive_every == 0 {
        return Err(Error::Config("scene size must be at least 16 with positive texture cell and stride".into()));
    }
    let mut rng = keyed_rng(cfg.seed, &format!("synth.scene.{index}"));
    let lo = n * 5 / 16;
    let split_y = rng.gen_range(lo..=n - lo);
    let split_x = rng.gen_range(lo..=n - lo);
    let mut pool = StreetClass::ALL.to_vec();
    pool.shuffle(&mut rng);
    let quads: [StreetClass; 4] = [pool[0], pool[1], pool[2], pool[3]];
    let quad_of = |y: usize, x: usize| usize::from(y >= split_y) * 2 + usize::from(x >= split_x);

    let label = u8::from(index % cfg.positive_every == cfg.positive_every - 1);
    let planted_quad = (label == 1).then(|| rng.gen_range(0..4));

    let mut seg = vec![0u8; n * n];
    let mut rgb = vec![0.0; n * n * 3];
    for y in 0..n {
        for x in 0..n {
            let q = quad_of(y, x);
            seg[y * n + x] = quads[q].id();
            let colour = if planted_quad == Some(q) {
                let on = (y / cfg.texture_cell + x / cfg.texture_cell).is_multiple_of(2);
                if on { [0.95; 3] } else { [0.05; 3] }
            } else {
                class_colour(quads[q])
            };
            for c in 0..3 {
                let jitter: f64 = rng.gen_range(-0.02..0.02);
                rgb[(y * n + x) * 3 + c] = (colour[c] + jitter).clamp(0.0, 1.0);
            }
        }
    }
    let segmentation = SegmentationMap::new(n, n, seg)?;
    let hist = segmentation.histogram();
    let mut classes = quads.to_vec();
    classes.sort_by_key(|c| (std::cmp::Reverse(hist[c.id() as usize]), *c));
    Ok(PlantedScene {
        image_id: format!("scene_{index:04}"),
        image: ImageRaster::new(n, n, rgb)?,
        segmentation,
        label,
        planted: planted_quad.map(|q| quads[q]),
        classes,
    })
}

pub fn planted_dataset(cfg: &PlantedConfig) -> Result<Vec<PlantedScene>> {
    (0..cfg.images).map(|i| planted_scene(cfg, i)).collect()
}

/// Writes `images/`, `segmentation/` and a `manifest.csv` under `dir` and
/// returns the manifest path. Positive scenes list the planted class as the
/// ground-truth top factor followed by the remaining classes by area.
pub fn write_planted_dataset(dir: impl AsRef<Path>, scenes: &[PlantedScene]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    for sub in ["images", "segmentation"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut manifest = String::from("image_id,image_path,segmentation_path,label,gt_ranking\n");
    for s in scenes {
        let img = format!("images/{}.png", s.image_id);
        let seg = format!("segmentation/{}.png", s.image_id);
        s.image.save_png(dir.join(&img))?;
        s.segmentation.save_png(dir.join(&seg))?;
        let gt = match s.planted {
            Some(p) => std::iter::once(p)
                .chain(s.classes.iter().copied().filter(|&c| c != p))
                .map(|c| c.id().to_string())
                .collect::<Vec<_>>()
                .join(";"),
            None => String::new(),
        };
        writeln!(manifest, "{},{img},{seg},{},{gt}", s.image_id, s.label).expect("writing to a String");
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// End-to-end planted-factor run: features from a seed-initialised
/// backbone, head training, then Score-CAM and factor ranking on the
/// positive validation scenes.
#[derive(Debug, Clone)]
pub struct PlantedBenchmark {
    pub scenes: PlantedConfig,
    pub model: SwinConfig,
    pub train: TrainConfig,
    pub channel_budget: Option<usize>,
}

impl PlantedBenchmark {
    /// 200 scenes of 128x128 with a 16-wide, patch-2, window-4 backbone.
    pub fn new(seed: u64) -> Self {
        Self {
            scenes: PlantedConfig { size: 128, seed, ..PlantedConfig::default() },
            model: SwinConfig {
                patch_size: 2,
                embed_dim: 16,
                num_heads: [1, 2, 4, 8],
                window_size: 4,
                seed,
                ..SwinConfig::default()
            },
            train: TrainConfig { seed, ..TrainConfig::default() },
            channel_budget: None,
        }
    }

    pub fn run(&self) -> Result<BenchmarkOutcome> {
        let scenes = planted_dataset(&self.scenes)?;
        let mut model = SwinModel::from_seed(self.model.clone())?;
        let data: Vec<LabeledFeature> = scenes
            .par_iter()
            .map(|s| LabeledFeature::new(model.forward(&s.image)?.pooled, s.label))
            .collect::<Result<_>>()?;
        let trained = train_head(&data, &self.train, &model.weights.head.fc)?;
        model.weights.head.fc = trained.head;

        let explainer = ScoreCam::new(ExplainerConfig {
            channel_budget: self.channel_budget,
            ..ExplainerConfig::default()
        });
        let size = self.scenes.size;
        let results: Vec<PlantedResult> = trained
            .val_indices
            .par_iter()
            .filter(|&&i| scenes[i].planted.is_some())
            .map(|&i| -> Result<PlantedResult> {
                let s = &scenes[i];
                let map = explainer.explain_detailed(&s.image, &model)?.map;
                let ranking = rank_factors(&s.segmentation, &map, default_min_pixels(size, size))?;
                Ok(PlantedResult {
                    image_id: s.image_id.clone(),
                    planted: s.planted.expect("filtered above"),
                    top: ranking.top(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(BenchmarkOutcome {
            train_accuracy: trained.train_accuracy,
            val_accuracy: trained.curve.last().and_then(|e| e.val_accuracy),
            results,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedResult {
    pub image_id: String,
    pub planted: StreetClass,
    pub top: Option<StreetClass>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    /// One entry per positive validation scene.
    pub results: Vec<PlantedResult>,
}

impl BenchmarkOutcome {
    pub fn hits(&self) -> usize {
        self.results.iter().filter(|r| r.top == Some(r.planted)).count()
    }

    pub fn top1_rate(&self) -> f64 {
        self.hits() as f64 / self.results.len().max(1) as f64
    }
}
