//! Cost of global versus windowed self-attention for each backbone stage.
//!
//! `cargo run --example complexity -- [height width channels window]`

use upd_core::swin::{complexity_msa, complexity_wmsa};

fn main() -> upd_core::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let [h, w, c, m] = match args[..] {
        [h, w, c, m] => [h, w, c, m],
        _ => [56, 56, 96, 7],
    };
    println!("{:>5} {:>5} {:>5} {:>22} {:>22} {:>8}", "h", "w", "C", "global", "windowed", "ratio");
    for stage in 0..4u32 {
        let (h, w, c) = (h >> stage, w >> stage, c << stage);
        if h == 0 || w == 0 {
            break;
        }
        let global = complexity_msa(h, w, c)?;
        let windowed = complexity_wmsa(h, w, c, m)?;
        println!(
            "{h:>5} {w:>5} {c:>5} {global:>22} {windowed:>22} {:>8.2}",
            global as f64 / windowed as f64
        );
    }
    Ok(())
}
