//! Ranking metrics at several cut-offs for hand-written predicted and
//! expert orderings.
//!
//! `cargo run --example ranking_eval`

use upd_core::metrics::{image_scores_at_k, RankReport, RankingJudgment};
use upd_core::StreetClass::*;

fn main() -> upd_core::Result<()> {
    let judgments = vec![
        RankingJudgment::new("exact", vec![Sidewalk, Building, Vehicle, Fence], vec![Sidewalk, Building, Vehicle, Fence])?,
        RankingJudgment::new("swapped", vec![Building, Sidewalk, Wall, Fence], vec![Sidewalk, Building, Vehicle, Fence])?,
        RankingJudgment::new("short truth", vec![Road, Sky, Pole, Wall], vec![Pole])?,
        RankingJudgment::new("miss", vec![Vegetation, Sky, Road, Person], vec![Motorcycle, TrafficSign])?,
    ];
    for j in &judgments {
        let s = image_scores_at_k(j, 4)?;
        println!("{:<12} AP@4 {:.3}  RPrec@4 {:.3}  NDCG@4 {:.3}", j.image_id, s.ap, s.rprec, s.ndcg);
    }
    println!();
    print!("{}", RankReport::compute(&judgments, 4)?.to_text());
    Ok(())
}
