//! Street-canyon proxy from segmentation maps, then detection accuracy
//! grouped by the resulting bins.
//!
//! `cargo run --example morphology_report -- [segmentation.png ...]`

use upd_core::morphology::{estimate_bin, estimate_ratio, stratified_report, StratifiedItem};
use upd_core::segmentation::load_segmentation;
use upd_core::{SegmentationMap, StreetClass};

/// Buildings of height `h` on both sides of a road strip of width `w`.
fn canyon(h: usize, w: usize) -> upd_core::Result<SegmentationMap> {
    let n = 64;
    let mut data = vec![StreetClass::Sky.id(); n * n];
    let (left, right) = ((n - w) / 2, (n + w) / 2);
    for y in 0..n {
        for x in 0..n {
            if y >= n - 16 && (left..right).contains(&x) {
                data[y * n + x] = StreetClass::Road.id();
            } else if y >= n - h && !(left..right).contains(&x) {
                data[y * n + x] = StreetClass::Building.id();
            }
        }
    }
    SegmentationMap::new(n, n, data)
}

fn main() -> upd_core::Result<()> {
    let paths: Vec<String> = std::env::args().skip(1).collect();
    let maps = if paths.is_empty() {
        [(0, 40), (10, 40), (20, 16), (30, 16), (60, 12), (60, 8)]
            .into_iter()
            .map(|(h, w)| canyon(h, w))
            .collect::<upd_core::Result<Vec<_>>>()?
    } else {
        paths.iter().map(|p| load_segmentation(p, None, None)).collect::<upd_core::Result<_>>()?
    };

    let mut items = Vec::new();
    for (i, seg) in maps.iter().enumerate() {
        let bin = estimate_bin(seg);
        let ratio = estimate_ratio(seg).map_or(String::from("-"), |r| format!("{r:.2}"));
        println!("map {i}: h/w {ratio} -> {}", bin.label());
        items.push(StratifiedItem { bin, prediction: Some((i % 2) as u8), label: Some(1), judgment: None });
    }
    let report = stratified_report(&items, 1)?;
    println!();
    print!("{}", report.to_text());
    Ok(())
}
