use super::attention::window_attention;
use super::layers::{gelu, softmax, Linear};
use super::weights::{BlockWeights, SwinWeights};
use super::{SwinConfig, NUM_STAGES};
use crate::error::{Error, Result};
use crate::raster::{FeatureGrid, ImageRaster};

/// Every intermediate the classifier produces for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Output grid of each stage: `H/4 x W/4 x C` up to `H/32 x W/32 x 8C`
    /// for patch size 4.
    pub stages: Vec<FeatureGrid>,
    /// Mean over last-stage tokens after the head LayerNorm.
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ForwardTrace {
    /// Arg-max class; class 1 is UPD.
    pub fn predicted_label(&self) -> usize {
        argmax(&self.probabilities)
    }

    pub fn upd_probability(&self) -> f64 {
        self.probabilities[1]
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Splits the image into non-overlapping `p x p` patches and projects each
/// flattened patch (`p * p * 3` values ordered row, column, channel) to `C`
/// channels.
pub fn patch_partition_embed(
    image: &ImageRaster,
    cfg: &SwinConfig,
    weights: &SwinWeights,
) -> Result<FeatureGrid> {
    let p = cfg.patch_size;
    let (h, w) = (image.height(), image.width());
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Config(format!(
            "image {h}x{w} is not divisible by patch size {p}"
        )));
    }
    let patch_len = p * p * 3;
    if weights.patch_embed.in_dim() != patch_len {
        return Err(Error::Dimension(format!(
            "patch embedding expects {} inputs, patch holds {patch_len}",
            weights.patch_embed.in_dim()
        )));
    }
    let (rows, cols) = (h / p, w / p);
    let px = image.data();
    let mut patches = Vec::with_capacity(rows * cols * patch_len);
    for r in 0..rows {
        for c in 0..cols {
            for dy in 0..p {
                let start = ((r * p + dy) * w + c * p) * 3;
                patches.extend_from_slice(&px[start..start + p * 3]);
            }
        }
    }
    let out = weights.patch_embed.forward(&patches)?;
    FeatureGrid::new(rows, cols, weights.patch_embed.out_dim(), out)
}

/// Pre-norm transformer block: `z = x + attn(LN(x))`, `out = z + MLP(LN(z))`
/// with a two-layer GELU MLP.
pub fn swin_block(
    grid: &FeatureGrid,
    shifted: bool,
    window: usize,
    heads: usize,
    block: &BlockWeights,
) -> Result<FeatureGrid> {
    let (rows, cols, dim) = (grid.rows(), grid.cols(), grid.dim());
    if block.norm1.dim() != dim {
        return Err(Error::Dimension(format!(
            "block width {} does not match grid dim {dim}",
            block.norm1.dim()
        )));
    }
    let normed = FeatureGrid::new(rows, cols, dim, block.norm1.forward(grid.data()))?;
    let attn = window_attention(&normed, shifted, window, heads, &block.qkv, &block.proj)?;
    let z: Vec<f64> = grid.data().iter().zip(attn.data()).map(|(a, b)| a + b).collect();

    let mut hidden = block.fc1.forward(&block.norm2.forward(&z))?;
    hidden.iter_mut().for_each(|v| *v = gelu(*v));
    let mlp = block.fc2.forward(&hidden)?;
    let out = z.iter().zip(&mlp).map(|(a, b)| a + b).collect();
    FeatureGrid::new(rows, cols, dim, out)
}

/// Concatenates each 2x2 token neighbourhood (order: top-left, bottom-left,
/// top-right, bottom-right) into a `4C` vector and projects it to `2C`.
pub fn patch_merge(grid: &FeatureGrid, reduction: &Linear) -> Result<FeatureGrid> {
    let (rows, cols, dim) = (grid.rows(), grid.cols(), grid.dim());
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::Config(format!(
            "patch merging needs even grid sides, got {rows}x{cols}"
        )));
    }
    if reduction.in_dim() != 4 * dim {
        return Err(Error::Dimension(format!(
            "merge projection expects {} inputs, concatenation gives {}",
            reduction.in_dim(),
            4 * dim
        )));
    }
    let (out_rows, out_cols) = (rows / 2, cols / 2);
    let mut concat = Vec::with_capacity(rows * cols * dim);
    for r in 0..out_rows {
        for c in 0..out_cols {
            for (dr, dc) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                concat.extend_from_slice(grid.token(2 * r + dr, 2 * c + dc));
            }
        }
    }
    let out = reduction.forward(&concat)?;
    FeatureGrid::new(out_rows, out_cols, reduction.out_dim(), out)
}

/// Full classifier pass: embedding, four stages, LayerNorm, global average
/// pooling, linear head and softmax.
pub fn forward(image: &ImageRaster, cfg: &SwinConfig, weights: &SwinWeights) -> Result<ForwardTrace> {
    cfg.check_input(image.height(), image.width())?;
    if weights.stages.len() != NUM_STAGES {
        return Err(Error::Dimension(format!(
            "weights hold {} stages, expected {NUM_STAGES}",
            weights.stages.len()
        )));
    }
    let mut grid = patch_partition_embed(image, cfg, weights)?;
    let mut stages = Vec::with_capacity(NUM_STAGES);
    for (s, stage) in weights.stages.iter().enumerate() {
        if let Some(merge) = &stage.merge {
            grid = patch_merge(&grid, merge)?;
        }
        for (b, block) in stage.blocks.iter().enumerate() {
            grid = swin_block(&grid, b % 2 == 1, cfg.window_size, cfg.num_heads[s], block)?;
        }
        stages.push(grid.clone());
    }

    let normed = weights.head.norm.forward(grid.data());
    let dim = grid.dim();
    let mut pooled = vec![0.0; dim];
    for token in normed.chunks_exact(dim) {
        for (p, v) in pooled.iter_mut().zip(token) {
            *p += v;
        }
    }
    let n = grid.tokens() as f64;
    pooled.iter_mut().for_each(|p| *p /= n);
    let logits = weights.head.fc.forward(&pooled)?;
    let probabilities = softmax(&logits);
    Ok(ForwardTrace {
        stages,
        pooled,
        logits,
        probabilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn tiny_cfg() -> SwinConfig {
        SwinConfig {
            patch_size: 4,
            embed_dim: 8,
            depths: [1, 1, 1, 1],
            num_heads: [1, 2, 2, 4],
            window_size: 1,
            seed: 5,
            ..SwinConfig::default()
        }
    }

    #[test]
    fn embed_56_gives_14x14() {
        let cfg = SwinConfig { embed_dim: 16, ..tiny_cfg() };
        let w = SwinWeights::init(&cfg);
        let img = ImageRaster::filled(56, 56, 0.5).unwrap();
        let g = patch_partition_embed(&img, &cfg, &w).unwrap();
        assert_eq!((g.rows(), g.cols(), g.dim()), (14, 14, 16));
    }

    #[test]
    fn embed_zero_image_is_zero() {
        let cfg = tiny_cfg();
        let w = SwinWeights::init(&cfg);
        let img = ImageRaster::filled(32, 32, 0.0).unwrap();
        let g = patch_partition_embed(&img, &cfg, &w).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_identity_recovers_patches() {
        let cfg = SwinConfig { embed_dim: 48, ..tiny_cfg() };
        let mut w = SwinWeights::init(&cfg);
        w.patch_embed.weight = Array2::eye(48);
        let data: Vec<f64> = (0..8 * 8 * 3).map(|i| i as f64 / 191.0).collect();
        let img = ImageRaster::new(8, 8, data).unwrap();
        let g = patch_partition_embed(&img, &cfg, &w).unwrap();
        assert_eq!((g.rows(), g.cols()), (2, 2));
        // Token (1, 0): rows 4..8, cols 0..4, flattened row, col, channel.
        let mut expected = Vec::new();
        for y in 4..8 {
            for x in 0..4 {
                expected.extend_from_slice(&img.pixel(y, x));
            }
        }
        assert_eq!(g.token(1, 0), &expected[..]);
    }

    #[test]
    fn embed_rejects_indivisible() {
        let cfg = tiny_cfg();
        let w = SwinWeights::init(&cfg);
        let img = ImageRaster::filled(10, 8, 0.0).unwrap();
        assert!(matches!(
            patch_partition_embed(&img, &cfg, &w),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identity_block_passes_through() {
        let data: Vec<f64> = (0..4 * 4 * 4).map(|i| (i as f64).cos()).collect();
        let g = FeatureGrid::new(4, 4, 4, data).unwrap();
        let block = BlockWeights::identity(4, 16);
        for shifted in [false, true] {
            assert_eq!(swin_block(&g, shifted, 2, 2, &block).unwrap(), g);
        }
    }

    #[test]
    fn merge_hand_example() {
        // 2x2x1 grid [[1, 2], [3, 4]] -> concat order (0,0),(1,0),(0,1),(1,1) = [1, 3, 2, 4].
        let g = FeatureGrid::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut lin = Linear::zeros(4, 2);
        lin.weight = Array2::from_shape_vec((4, 2), vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, -1.0]).unwrap();
        let m = patch_merge(&g, &lin).unwrap();
        assert_eq!((m.rows(), m.cols(), m.dim()), (1, 1, 2));
        // [1*1 + 2*2, 3*1 + 4*(-1)]
        assert_eq!(m.data(), &[5.0, -1.0]);
    }

    #[test]
    fn merge_equal_neighbours() {
        let v = [0.5, -1.0, 2.0];
        let g = FeatureGrid::new(2, 2, 3, v.repeat(4)).unwrap();
        let lin = Linear::init(1, "m", 12, 6);
        let m = patch_merge(&g, &lin).unwrap();
        let expected = lin.forward(&v.repeat(4)).unwrap();
        assert_eq!(m.data(), &expected[..]);
    }

    #[test]
    fn merge_14_to_7_and_odd_rejected() {
        let g = FeatureGrid::zeros(14, 14, 4);
        let m = patch_merge(&g, &Linear::zeros(16, 8)).unwrap();
        assert_eq!((m.rows(), m.cols(), m.dim()), (7, 7, 8));
        let odd = FeatureGrid::zeros(7, 7, 4);
        assert!(matches!(patch_merge(&odd, &Linear::zeros(16, 8)), Err(Error::Config(_))));
    }

    #[test]
    fn forward_is_deterministic_and_normalized() {
        let cfg = tiny_cfg();
        let w = SwinWeights::init(&cfg);
        let data: Vec<f64> = (0..32 * 32 * 3).map(|i| ((i * 7919) % 256) as f64 / 255.0).collect();
        let img = ImageRaster::new(32, 32, data).unwrap();
        let a = forward(&img, &cfg, &w).unwrap();
        let b = forward(&img, &cfg, &w).unwrap();
        assert_eq!(a, b);
        assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let dims: Vec<_> = a.stages.iter().map(|g| (g.rows(), g.dim())).collect();
        assert_eq!(dims, vec![(8, 8), (4, 16), (2, 32), (1, 64)]);
    }
}
