//! Toy-scale shifted-window transformer classifier.
//!
//! Four stages of windowed self-attention blocks over a token grid that is
//! halved in resolution and doubled in width between stages by patch
//! merging. Blocks alternate between regular windows and windows shifted by
//! `floor(M/2)` tokens. Relative position bias is not used.

mod attention;
mod complexity;
mod forward;
mod layers;
mod weights;

pub use attention::{
    cyclic_shift, region_labels, shift_amounts, window_attention, window_attention_traced,
    WindowAttentionTrace,
};
pub use complexity::{complexity_msa, complexity_wmsa};
pub(crate) use forward::argmax;
pub use forward::{forward, patch_merge, patch_partition_embed, swin_block, ForwardTrace};
pub use layers::{gelu, softmax, LayerNorm, Linear, LN_EPS};
pub use weights::{
    decode as decode_weights, encode as encode_weights, load as load_weights,
    save as save_weights, BlockWeights, HeadWeights, StageWeights, SwinWeights,
};

use crate::error::{Error, Result};
use crate::raster::{FeatureGrid, ImageRaster};
use crate::scorecam::{Classifier, Inference};

pub const NUM_STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SwinConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depths: [usize; NUM_STAGES],
    pub num_heads: [usize; NUM_STAGES],
    pub window_size: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for SwinConfig {
    fn default() -> Self {
        Self {
            patch_size: 4,
            embed_dim: 32,
            depths: [2, 2, 2, 2],
            num_heads: [2, 4, 8, 16],
            window_size: 7,
            mlp_ratio: 4.0,
            num_classes: 2,
            seed: 0,
        }
    }
}

impl SwinConfig {
    pub fn stage_dim(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    pub fn mlp_hidden(&self, stage: usize) -> usize {
        (self.stage_dim(stage) as f64 * self.mlp_ratio).round() as usize
    }

    pub fn last_dim(&self) -> usize {
        self.stage_dim(NUM_STAGES - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.embed_dim == 0 || self.window_size == 0 {
            return Err(Error::Config(
                "patch_size, embed_dim and window_size must be positive".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) {
            return Err(Error::Config(format!("invalid mlp_ratio {}", self.mlp_ratio)));
        }
        for s in 0..NUM_STAGES {
            let heads = self.num_heads[s];
            if heads == 0 || !self.stage_dim(s).is_multiple_of(heads) {
                return Err(Error::Config(format!(
                    "stage {} width {} is not divisible by {heads} heads",
                    s + 1,
                    self.stage_dim(s)
                )));
            }
            if self.mlp_hidden(s) == 0 {
                return Err(Error::Config("mlp hidden width rounds to zero".into()));
            }
        }
        Ok(())
    }

    /// Token grid `(rows, cols)` of every stage for an `height x width` input.
    pub fn stage_grids(&self, height: usize, width: usize) -> [(usize, usize); NUM_STAGES] {
        let mut out = [(0, 0); NUM_STAGES];
        for (s, slot) in out.iter_mut().enumerate() {
            *slot = (
                (height / self.patch_size) >> s,
                (width / self.patch_size) >> s,
            );
        }
        out
    }

    /// Rejects inputs whose stage grids cannot be tiled by `M x M` windows.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let unit = self.patch_size * 8;
        if !height.is_multiple_of(unit) || !width.is_multiple_of(unit) {
            return Err(Error::Config(format!(
                "input {height}x{width} is not divisible by patch_size*8 = {unit}"
            )));
        }
        let m = self.window_size;
        for (s, (r, c)) in self.stage_grids(height, width).into_iter().enumerate() {
            if r % m != 0 || c % m != 0 {
                return Err(Error::Config(format!(
                    "stage {} grid {r}x{c} is not divisible by window size {m}",
                    s + 1
                )));
            }
        }
        Ok(())
    }
}

/// A configuration bundled with its weights; the unit that gets evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct SwinModel {
    pub config: SwinConfig,
    pub weights: SwinWeights,
}

impl SwinModel {
    /// Builds a model with weights derived from `config.seed`.
    pub fn from_seed(config: SwinConfig) -> Result<Self> {
        config.validate()?;
        let weights = SwinWeights::init(&config);
        Ok(Self { config, weights })
    }

    pub fn forward(&self, image: &ImageRaster) -> Result<ForwardTrace> {
        forward(image, &self.config, &self.weights)
    }
}

impl Classifier for SwinModel {
    fn infer(&self, image: &ImageRaster) -> Result<Inference> {
        let trace = self.forward(image)?;
        let grid = &trace.stages[NUM_STAGES - 1];
        // Explanations read the last stage as the head sees it, after its LayerNorm.
        let normed = self.weights.head.norm.forward(grid.data());
        let last_stage = FeatureGrid::new(grid.rows(), grid.cols(), grid.dim(), normed)?;
        Ok(Inference {
            last_stage,
            probabilities: trace.probabilities,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = SwinConfig::default();
        cfg.validate().unwrap();
        cfg.check_input(224, 224).unwrap();
        assert!(cfg.check_input(112, 112).is_err());
        assert_eq!(
            cfg.stage_grids(224, 224),
            [(56, 56), (28, 28), (14, 14), (7, 7)]
        );
    }

    #[test]
    fn rejects_head_mismatch() {
        let cfg = SwinConfig {
            num_heads: [3, 4, 8, 16],
            ..SwinConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
