//! Score-weighted class activation maps (Score-CAM).
//!
//! Gradient free: every selected channel of the classifier's last-stage grid
//! is upsampled to input resolution, normalized into a soft mask, and scored
//! by how much the masked image raises the target-class probability over a
//! baseline image. The channel maps are then blended with softmax weights of
//! those scores.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{bilinear_resize, minmax_normalize, ActivationMap, FeatureGrid, ImageRaster};
use crate::swin::softmax;

/// What an explainer needs from a classifier for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// Last-stage token grid, spatially laid out.
    pub last_stage: FeatureGrid,
    pub probabilities: Vec<f64>,
}

pub trait Classifier: Sync {
    fn infer(&self, image: &ImageRaster) -> Result<Inference>;
}

/// Anything that turns an image and a classifier into an activation map.
pub trait Explainer: Sync {
    fn explain(&self, image: &ImageRaster, model: &dyn Classifier) -> Result<ActivationMap>;
}

/// Reference input whose score is subtracted from every masked score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline {
    Zero,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainerConfig {
    pub target_class: usize,
    /// Maximum number of channels scored; `None` scores all of them.
    pub channel_budget: Option<usize>,
    pub baseline: Baseline,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            target_class: 1,
            channel_budget: None,
            baseline: Baseline::Zero,
        }
    }
}

/// Channels ranked by L2 norm of their activations, descending, ties broken
/// by ascending index, truncated to `budget`.
pub fn select_channels(grid: &FeatureGrid, budget: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = (0..grid.dim()).map(|k| (k, grid.channel_l2_norm(k))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(budget).map(|(k, _)| k).collect()
}

/// Intermediate quantities of one explanation, in ascending channel order.
#[derive(Debug, Clone)]
pub struct ScoreCamDetail {
    pub channels: Vec<usize>,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub baseline_score: f64,
    pub map: ActivationMap,
}

#[derive(Debug, Clone, Default)]
pub struct ScoreCam {
    pub config: ExplainerConfig,
}

impl ScoreCam {
    pub fn new(config: ExplainerConfig) -> Self {
        Self { config }
    }

    pub fn explain_detailed(&self, image: &ImageRaster, model: &dyn Classifier) -> Result<ScoreCamDetail> {
        let cfg = &self.config;
        if cfg.channel_budget == Some(0) {
            return Err(Error::Config("channel budget must be at least 1".into()));
        }
        let (h, w) = (image.height(), image.width());
        let grid = model.infer(image)?.last_stage;
        let mut channels = select_channels(&grid, cfg.channel_budget.unwrap_or(grid.dim()));
        if channels.is_empty() {
            return Err(Error::Config("no channels selected for scoring".into()));
        }
        // A fixed reduction order makes the result independent of how the
        // channels were visited.
        channels.sort_unstable();

        let baseline = match cfg.baseline {
            Baseline::Zero => ImageRaster::filled(h, w, 0.0)?,
            Baseline::Constant(v) => ImageRaster::filled(h, w, v)?,
        };
        let target = |probs: &[f64]| -> Result<f64> {
            probs.get(cfg.target_class).copied().ok_or_else(|| {
                Error::Config(format!(
                    "target class {} outside {} model classes",
                    cfg.target_class,
                    probs.len()
                ))
            })
        };
        let baseline_score = target(&model.infer(&baseline)?.probabilities)?;

        let per_channel: Vec<(Vec<f64>, f64)> = channels
            .par_iter()
            .map(|&k| -> Result<(Vec<f64>, f64)> {
                let up = bilinear_resize(&grid.channel(k), grid.rows(), grid.cols(), h, w)?;
                let mask = minmax_normalize(&up, h, w)?;
                let masked = image.masked(mask.data())?;
                let score = target(&model.infer(&masked)?.probabilities)? - baseline_score;
                Ok((up, score))
            })
            .collect::<Result<_>>()?;

        let scores: Vec<f64> = per_channel.iter().map(|(_, s)| *s).collect();
        let weights = softmax(&scores);
        let mut combined = vec![0.0; h * w];
        for ((up, _), wk) in per_channel.iter().zip(&weights) {
            for (c, u) in combined.iter_mut().zip(up) {
                *c += wk * u;
            }
        }
        combined.iter_mut().for_each(|v| *v = v.max(0.0));
        let map = minmax_normalize(&combined, h, w)?;
        Ok(ScoreCamDetail {
            channels,
            scores,
            weights,
            baseline_score,
            map,
        })
    }
}

impl Explainer for ScoreCam {
    fn explain(&self, image: &ImageRaster, model: &dyn Classifier) -> Result<ActivationMap> {
        Ok(self.explain_detailed(image, model)?.map)
    }
}
