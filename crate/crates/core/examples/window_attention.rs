//! Shifted-window attention on a small grid: prints which tokens each query
//! may attend to, so the cyclic shift and its mask can be inspected.
//!
//! `cargo run --example window_attention`

use upd_core::swin::{shift_amounts, window_attention_traced, Linear};
use upd_core::FeatureGrid;

fn main() -> upd_core::Result<()> {
    let (rows, cols, dim, window, heads) = (8, 8, 4, 4, 1);
    let data: Vec<f64> = (0..rows * cols * dim).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5).collect();
    let grid = FeatureGrid::new(rows, cols, dim, data)?;
    let qkv = Linear::init(7, "demo.qkv", dim, 3 * dim);
    let proj = Linear::init(7, "demo.proj", dim, dim);

    for shifted in [false, true] {
        let (sr, sc) = shift_amounts(rows, cols, window, shifted);
        let (_, traces) = window_attention_traced(&grid, shifted, window, heads, &qkv, &proj)?;
        println!("shifted={shifted} shift=({sr},{sc}) windows={}", traces.len());
        // The last window is the one that wraps around when shifted.
        let t = traces.last().expect("at least one window");
        let n = t.tokens.len();
        for (i, q) in t.tokens.iter().enumerate().take(4) {
            let visible: Vec<String> = (0..n)
                .filter(|&j| t.probs[i * n + j] > 0.0)
                .map(|j| format!("{:?}", t.tokens[j]))
                .collect();
            println!("  query {q:?} sees {} tokens: {}", visible.len(), visible.join(" "));
        }
    }
    Ok(())
}
