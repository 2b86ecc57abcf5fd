//! Pairwise perception votes turned into per-attribute Q scores and then
//! into UPD / non-UPD labels by percentile thresholds.
//!
//! `cargo run --example perception_labels -- [comparisons.csv]`
//!
//! The CSV needs `left_id,right_id,attribute,outcome`. Without one, votes
//! are simulated from a hidden per-image quality.

use rand::Rng;

use upd_core::perception::{
    compute_all_q_scores, label_dataset, read_comparisons_csv, Attribute, ComparisonRecord, LabelConfig, Outcome,
};
use upd_core::rng::keyed_rng;

fn simulated() -> upd_core::Result<Vec<ComparisonRecord>> {
    let mut rng = keyed_rng(0, "example.votes");
    let quality: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
    let mut records = Vec::new();
    for _ in 0..6000 {
        let (a, b) = (rng.gen_range(0..40), rng.gen_range(0..40));
        if a == b {
            continue;
        }
        let attribute = Attribute::ALL[rng.gen_range(0..6)];
        let sign = if attribute.is_negative() { -1.0 } else { 1.0 };
        let margin = sign * (quality[a] - quality[b]) + rng.gen_range(-0.3..0.3);
        let outcome = match margin {
            m if m > 0.05 => Outcome::Left,
            m if m < -0.05 => Outcome::Right,
            _ => Outcome::Tie,
        };
        records.push(ComparisonRecord::new(&format!("img{a:02}"), &format!("img{b:02}"), attribute, outcome)?);
    }
    Ok(records)
}

fn main() -> upd_core::Result<()> {
    let records = match std::env::args().nth(1) {
        Some(path) => {
            let file = std::fs::File::open(&path).map_err(|e| upd_core::Error::io(&path, e))?;
            read_comparisons_csv(file)?
        }
        None => simulated()?,
    };
    let scores = compute_all_q_scores(&records)?;
    let cfg = LabelConfig { low_pct: 10.0, high_pct: 90.0, min_votes: 50 };
    let labeled = label_dataset(&scores, &cfg)?;
    let mut by_score: Vec<_> = labeled.iter().collect();
    by_score.sort_by(|a, b| a.combined_score.total_cmp(&b.combined_score));
    for l in &by_score {
        let label = match l.label {
            Some(1) => "UPD",
            Some(_) => "non-UPD",
            None => "",
        };
        println!("{:<8} combined {:>6.3}  votes {:>4}  {label}", l.image_id, l.combined_score, l.votes);
    }
    Ok(())
}
