//! Window-restricted multi-head self-attention (W-MSA) and its shifted
//! variant (SW-MSA).
//!
//! The shifted variant rolls the grid up and left by `floor(M/2)` tokens,
//! attends within the regular `M x M` windows of the rolled grid, then rolls
//! back. Windows on the bottom and right edges of the rolled grid contain
//! tokens that were not adjacent before the roll; a region mask gives pairs
//! from different regions zero attention. An axis whose length equals `M`
//! holds a single window and is not shifted.

use super::layers::{softmax, Linear};
use crate::error::{Error, Result};
use crate::raster::FeatureGrid;

/// Row and column shift used by a layer over a `rows x cols` grid.
pub fn shift_amounts(rows: usize, cols: usize, window: usize, shifted: bool) -> (usize, usize) {
    if !shifted {
        return (0, 0);
    }
    let half = window / 2;
    (
        if rows > window { half } else { 0 },
        if cols > window { half } else { 0 },
    )
}

/// Cyclic roll with `torch.roll` semantics: `out[r][c] = in[(r - dr) mod R][(c - dc) mod C]`.
pub fn cyclic_shift(grid: &FeatureGrid, dr: isize, dc: isize) -> FeatureGrid {
    let (rows, cols, dim) = (grid.rows(), grid.cols(), grid.dim());
    if dr == 0 && dc == 0 {
        return grid.clone();
    }
    let mut data = Vec::with_capacity(grid.data().len());
    for r in 0..rows {
        let sr = (r as isize - dr).rem_euclid(rows as isize) as usize;
        for c in 0..cols {
            let sc = (c as isize - dc).rem_euclid(cols as isize) as usize;
            data.extend_from_slice(grid.token(sr, sc));
        }
    }
    FeatureGrid::new(rows, cols, dim, data).expect("roll preserves shape")
}

/// Region id of every token of the rolled grid. The rolled grid is cut at
/// `R - M` and `R - shift` on each axis; tokens attend to each other only
/// when their region ids agree.
pub fn region_labels(rows: usize, cols: usize, window: usize, sr: usize, sc: usize) -> Vec<usize> {
    let band = |i: usize, len: usize, s: usize| -> usize {
        if i < len - window {
            0
        } else if i < len - s {
            1
        } else {
            2
        }
    };
    let mut labels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            labels.push(band(r, rows, sr) * 3 + band(c, cols, sc));
        }
    }
    labels
}

/// Attention probabilities of one head inside one window.
#[derive(Debug, Clone)]
pub struct WindowAttentionTrace {
    pub window: (usize, usize),
    pub head: usize,
    /// `(row, col)` of each window token in the un-rolled input grid.
    pub tokens: Vec<(usize, usize)>,
    /// Row-major `n x n` matrix; row `i` holds the weights of query `i`.
    pub probs: Vec<f64>,
}

fn check(grid: &FeatureGrid, window: usize, heads: usize, qkv: &Linear, proj: &Linear) -> Result<()> {
    if window == 0 || !grid.rows().is_multiple_of(window) || !grid.cols().is_multiple_of(window) {
        return Err(Error::Config(format!(
            "grid {}x{} is not divisible by window size {window}",
            grid.rows(),
            grid.cols()
        )));
    }
    let dim = grid.dim();
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::Config(format!("dim {dim} not divisible by {heads} heads")));
    }
    if qkv.in_dim() != dim || qkv.out_dim() != 3 * dim || proj.in_dim() != dim || proj.out_dim() != dim {
        return Err(Error::Dimension(format!(
            "attention projections do not match token dim {dim}"
        )));
    }
    Ok(())
}

pub fn window_attention(
    grid: &FeatureGrid,
    shifted: bool,
    window: usize,
    heads: usize,
    qkv: &Linear,
    proj: &Linear,
) -> Result<FeatureGrid> {
    attend(grid, shifted, window, heads, qkv, proj, None)
}

/// Same as [`window_attention`] but also returns every window's attention matrix.
pub fn window_attention_traced(
    grid: &FeatureGrid,
    shifted: bool,
    window: usize,
    heads: usize,
    qkv: &Linear,
    proj: &Linear,
) -> Result<(FeatureGrid, Vec<WindowAttentionTrace>)> {
    let mut traces = Vec::new();
    let out = attend(grid, shifted, window, heads, qkv, proj, Some(&mut traces))?;
    Ok((out, traces))
}

fn attend(
    grid: &FeatureGrid,
    shifted: bool,
    window: usize,
    heads: usize,
    qkv: &Linear,
    proj: &Linear,
    mut traces: Option<&mut Vec<WindowAttentionTrace>>,
) -> Result<FeatureGrid> {
    check(grid, window, heads, qkv, proj)?;
    let (rows, cols, dim) = (grid.rows(), grid.cols(), grid.dim());
    let (sr, sc) = shift_amounts(rows, cols, window, shifted);
    let rolled = cyclic_shift(grid, -(sr as isize), -(sc as isize));
    let labels = (sr > 0 || sc > 0).then(|| region_labels(rows, cols, window, sr, sc));

    let qkv_out = qkv.forward(rolled.data())?;
    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let n = window * window;
    let mut mixed = vec![0.0; rows * cols * dim];
    let mut scores = vec![0.0; n];
    let mut idx = Vec::with_capacity(n);

    for wr in 0..rows / window {
        for wc in 0..cols / window {
            idx.clear();
            for r in wr * window..(wr + 1) * window {
                for c in wc * window..(wc + 1) * window {
                    idx.push(r * cols + c);
                }
            }
            for h in 0..heads {
                let q_off = h * head_dim;
                let k_off = dim + h * head_dim;
                let v_off = 2 * dim + h * head_dim;
                let mut probs_all = traces.as_ref().map(|_| Vec::with_capacity(n * n));
                for i in 0..n {
                    let qi = &qkv_out[idx[i] * 3 * dim + q_off..][..head_dim];
                    for j in 0..n {
                        let masked = labels
                            .as_ref()
                            .is_some_and(|l| l[idx[i]] != l[idx[j]]);
                        scores[j] = if masked {
                            f64::NEG_INFINITY
                        } else {
                            let kj = &qkv_out[idx[j] * 3 * dim + k_off..][..head_dim];
                            qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                        };
                    }
                    let p = softmax(&scores);
                    let dst = &mut mixed[idx[i] * dim + q_off..][..head_dim];
                    for (j, &pj) in p.iter().enumerate() {
                        if pj == 0.0 {
                            continue;
                        }
                        let vj = &qkv_out[idx[j] * 3 * dim + v_off..][..head_dim];
                        for (d, v) in dst.iter_mut().zip(vj) {
                            *d += pj * v;
                        }
                    }
                    if let Some(all) = probs_all.as_mut() {
                        all.extend_from_slice(&p);
                    }
                }
                if let (Some(t), Some(probs)) = (traces.as_deref_mut(), probs_all) {
                    let tokens = idx
                        .iter()
                        .map(|&k| ((k / cols + sr) % rows, (k % cols + sc) % cols))
                        .collect();
                    t.push(WindowAttentionTrace {
                        window: (wr, wc),
                        head: h,
                        tokens,
                        probs,
                    });
                }
            }
        }
    }

    let projected = FeatureGrid::new(rows, cols, dim, proj.forward(&mixed)?)?;
    Ok(cyclic_shift(&projected, sr as isize, sc as isize))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: usize, cols: usize, dim: usize) -> FeatureGrid {
        let data = (0..rows * cols * dim).map(|i| (i as f64 * 0.37).sin()).collect();
        FeatureGrid::new(rows, cols, dim, data).unwrap()
    }

    #[test]
    fn roll_roundtrip() {
        let g = grid(4, 6, 2);
        let r = cyclic_shift(&g, -1, -2);
        assert_eq!(r.token(0, 0), g.token(1, 2));
        assert_eq!(cyclic_shift(&r, 1, 2), g);
    }

    #[test]
    fn labels_for_worked_example() {
        // 8x8 grid, M = 4, shift 2: rolled rows 0..4 | 4..6 | 6..8.
        let l = region_labels(8, 8, 4, 2, 2);
        assert_eq!(l[0], 0);
        assert_eq!(l[5 * 8 + 5], 4);
        assert_eq!(l[7 * 8 + 7], 8);
        assert_eq!(l[5 * 8 + 7], 5);
        assert_eq!(shift_amounts(8, 8, 4, true), (2, 2));
        assert_eq!(shift_amounts(4, 8, 4, true), (0, 2));
        assert_eq!(shift_amounts(8, 8, 4, false), (0, 0));
    }

    #[test]
    fn rejects_indivisible_grid() {
        let g = grid(6, 6, 4);
        let qkv = Linear::zeros(4, 12);
        let proj = Linear::zeros(4, 4);
        assert!(matches!(
            window_attention(&g, false, 4, 2, &qkv, &proj),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rows_sum_to_one() {
        let g = grid(8, 8, 4);
        let qkv = Linear::init(3, "qkv", 4, 12);
        let proj = Linear::init(3, "proj", 4, 4);
        for shifted in [false, true] {
            let (_, traces) = window_attention_traced(&g, shifted, 4, 2, &qkv, &proj).unwrap();
            assert_eq!(traces.len(), 4 * 2);
            for t in &traces {
                for row in t.probs.chunks_exact(16) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
