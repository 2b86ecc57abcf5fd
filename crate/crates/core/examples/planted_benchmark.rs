//! Synthetic scenes with a texture planted in one class region: train the
//! head, explain the positive validation scenes and count how often the
//! planted class comes out on top.
//!
//! `cargo run --release --example planted_benchmark -- [seed]`

use std::time::Instant;

use upd_core::synth::PlantedBenchmark;

fn main() -> upd_core::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let start = Instant::now();
    let out = PlantedBenchmark::new(seed).run()?;
    println!("head train accuracy {:.3}", out.train_accuracy);
    if let Some(v) = out.val_accuracy {
        println!("head validation accuracy {v:.3}");
    }
    for r in out.results.iter().filter(|r| r.top != Some(r.planted)) {
        let top = r.top.map_or("none", |c| c.name());
        println!("  miss {}: planted {}, ranked first {top}", r.image_id, r.planted);
    }
    println!(
        "planted class ranked first in {}/{} positive scenes ({:.1}%)",
        out.hits(),
        out.results.len(),
        100.0 * out.top1_rate()
    );
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
