//! Located predictions exported as GeoJSON points and aggregated on a
//! regular lat/lon grid.
//!
//! `cargo run --example case_study_map -- [out.geojson]`

use rand::Rng;

use upd_core::geo::{emit_geojson, grid_aggregate, StudyRecord};
use upd_core::ranking::FactorEntry;
use upd_core::rng::keyed_rng;
use upd_core::StreetClass;

fn main() -> upd_core::Result<()> {
    let mut rng = keyed_rng(3, "example.locations");
    let records: Vec<StudyRecord> = (0..60)
        .map(|i| {
            let (lat, lon): (f64, f64) = (34.05 + rng.gen_range(0.0..0.03), -118.25 + rng.gen_range(0.0..0.03));
            // Disorder is likelier toward the south-west corner.
            let p_upd = (1.0 - (lat - 34.05) / 0.03 * 0.5 - (lon + 118.25) / 0.03 * 0.5).clamp(0.0, 1.0);
            let upd = p_upd > 0.5;
            let factors = if upd {
                vec![
                    FactorEntry { class: StreetClass::Sidewalk, density: 0.61, pixel_count: 4200 },
                    FactorEntry { class: StreetClass::Fence, density: 0.48, pixel_count: 900 },
                ]
            } else {
                Vec::new()
            };
            StudyRecord { image_id: format!("site{i:03}"), lat, lon, upd, p_upd, factors }
        })
        .collect();

    let out = emit_geojson(&records, 3);
    if !out.rejected.is_empty() {
        eprintln!("rejected: {}", out.rejected.join(", "));
    }
    let text = serde_json::to_string_pretty(&out.collection).expect("GeoJSON value serialises");
    match std::env::args().nth(1) {
        Some(path) => std::fs::write(&path, text).map_err(|e| upd_core::Error::io(&path, e))?,
        None => println!("{} features, {} bytes of GeoJSON", records.len(), text.len()),
    }

    println!("{:>10} {:>11} {:>6} {:>9}", "cell_lat", "cell_lon", "count", "upd_rate");
    for c in grid_aggregate(&records, 0.01)? {
        println!("{:>10.3} {:>11.3} {:>6} {:>9.2}", c.cell_lat, c.cell_lon, c.count, c.upd_rate);
    }
    Ok(())
}
