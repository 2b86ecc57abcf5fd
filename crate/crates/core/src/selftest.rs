//! Runtime oracle checks behind `upd selftest`: each fast kernel is compared
//! with a deliberately naive re-implementation on seeded random inputs.

use rand::Rng;

use crate::error::Result;
use crate::metrics::{image_scores_at_k, RankingJudgment};
use crate::perception::{compute_q_scores, Attribute, ComparisonRecord, Outcome};
use crate::raster::{ActivationMap, FeatureGrid};
use crate::ranking::rank_factors;
use crate::rng::keyed_rng;
use crate::segmentation::{SegmentationMap, StreetClass};
use crate::swin::{complexity_msa, complexity_wmsa, window_attention, Linear};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

/// Plain per-window multi-head attention without shifts.
pub fn naive_window_attention(
    grid: &FeatureGrid,
    window: usize,
    heads: usize,
    qkv: &Linear,
    proj: &Linear,
) -> Result<Vec<f64>> {
    let (rows, cols, dim) = (grid.rows(), grid.cols(), grid.dim());
    let hd = dim / heads;
    let mut out = vec![0.0; rows * cols * dim];
    for wr in (0..rows).step_by(window) {
        for wc in (0..cols).step_by(window) {
            let cells: Vec<(usize, usize)> = (wr..wr + window)
                .flat_map(|r| (wc..wc + window).map(move |c| (r, c)))
                .collect();
            let proj_in: Vec<Vec<f64>> = cells
                .iter()
                .map(|&(r, c)| qkv.forward(grid.token(r, c)))
                .collect::<Result<_>>()?;
            for (i, &(r, c)) in cells.iter().enumerate() {
                let mut concat = vec![0.0; dim];
                for h in 0..heads {
                    let q = &proj_in[i][h * hd..(h + 1) * hd];
                    let scores: Vec<f64> = proj_in
                        .iter()
                        .map(|t| {
                            let k = &t[dim + h * hd..dim + (h + 1) * hd];
                            q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt()
                        })
                        .collect();
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for (t, ej) in proj_in.iter().zip(&e) {
                        for d in 0..hd {
                            concat[h * hd + d] += ej / z * t[2 * dim + h * hd + d];
                        }
                    }
                }
                let y = proj.forward(&concat)?;
                out[(r * cols + c) * dim..(r * cols + c + 1) * dim].copy_from_slice(&y);
            }
        }
    }
    Ok(out)
}

fn window_oracle(seed: u64) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for (i, &(m, windows, dim, heads)) in [(2, 2, 8, 2), (4, 2, 8, 1), (7, 1, 12, 3)].iter().enumerate() {
        let side = m * windows;
        let mut rng = keyed_rng(seed, &format!("selftest.window.{i}"));
        let data = (0..side * side * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grid = FeatureGrid::new(side, side, dim, data)?;
        let qkv = Linear::init(seed, &format!("selftest.{i}.qkv"), dim, 3 * dim);
        let proj = Linear::init(seed, &format!("selftest.{i}.proj"), dim, dim);
        let fast = window_attention(&grid, false, m, heads, &qkv, &proj)?;
        let slow = naive_window_attention(&grid, m, heads, &qkv, &proj)?;
        for (a, b) in fast.data().iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(check("window attention", worst < 1e-10, format!("max abs diff {worst:e}")))
}

fn complexity_identity(seed: u64) -> Result<CheckResult> {
    let mut rng = keyed_rng(seed, "selftest.complexity");
    let mut failures = 0;
    for _ in 0..200 {
        let (h, w, c, m) = (
            rng.gen_range(1..200u64),
            rng.gen_range(1..200u64),
            rng.gen_range(1..1024u64),
            rng.gen_range(1..16u64),
        );
        let (hw, c128) = ((h * w) as i128, c as i128);
        let expect = 2 * hw * c128 * (hw - (m * m) as i128);
        let got = complexity_msa(h, w, c)? as i128 - complexity_wmsa(h, w, c, m)? as i128;
        failures += usize::from(got != expect);
    }
    Ok(check("complexity identity", failures == 0, format!("{failures} of 200 mismatched")))
}

fn ranking_oracle(seed: u64) -> Result<CheckResult> {
    let mut rng = keyed_rng(seed, "selftest.ranking");
    let mut failures = 0;
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..32), rng.gen_range(1..32));
        let seg: Vec<u8> = (0..h * w).map(|_| rng.gen_range(0..=12)).collect();
        let act: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let got = rank_factors(
            &SegmentationMap::new(h, w, seg.clone())?,
            &ActivationMap::new(h, w, act.clone())?,
            1,
        )?;
        let mut naive: Vec<(u8, f64)> = Vec::new();
        for class in 1..=12u8 {
            let (mut s, mut n) = (0.0, 0usize);
            for (id, a) in seg.iter().zip(&act) {
                if *id == class {
                    s += a;
                    n += 1;
                }
            }
            if n > 0 {
                naive.push((class, s / n as f64));
            }
        }
        naive.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let same = got.entries.len() == naive.len()
            && got
                .entries
                .iter()
                .zip(&naive)
                .all(|(e, (c, d))| e.class.id() == *c && (e.density - d).abs() < 1e-12);
        failures += usize::from(!same);
    }
    Ok(check("factor ranking", failures == 0, format!("{failures} of 100 mismatched")))
}

fn metric_collapse(seed: u64) -> Result<CheckResult> {
    let mut rng = keyed_rng(seed, "selftest.metrics");
    let mut failures = 0;
    for t in 0..500 {
        let mut pool = StreetClass::ALL.to_vec();
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, pool: &mut Vec<StreetClass>| {
            use rand::seq::SliceRandom;
            pool.shuffle(rng);
            pool[..rng.gen_range(1..=4)].to_vec()
        };
        let predicted = draw(&mut rng, &mut pool);
        let ground_truth = draw(&mut rng, &mut pool);
        let j = RankingJudgment::new(format!("t{t}"), predicted, ground_truth)?;
        let s = image_scores_at_k(&j, 1)?;
        failures += usize::from(!(s.ap == s.rprec && s.rprec == s.ndcg));
    }
    Ok(check("metric collapse at k=1", failures == 0, format!("{failures} of 500 differed")))
}

fn q_bounds(seed: u64) -> Result<CheckResult> {
    let mut rng = keyed_rng(seed, "selftest.q");
    let records: Vec<ComparisonRecord> = (0..2000)
        .filter_map(|_| {
            let (a, b) = (rng.gen_range(0..40), rng.gen_range(0..40));
            let outcome = [Outcome::Left, Outcome::Right, Outcome::Tie][rng.gen_range(0..3)];
            ComparisonRecord::new(&format!("i{a}"), &format!("i{b}"), Attribute::Safe, outcome).ok()
        })
        .collect();
    let scores = compute_q_scores(&records, Attribute::Safe)?;
    let out = scores.iter().filter(|q| !(0.0..=10.0).contains(&q.score)).count();
    Ok(check("q score bounds", out == 0, format!("{out} of {} outside [0, 10]", scores.len())))
}

pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        window_oracle(seed)?,
        complexity_identity(seed)?,
        ranking_oracle(seed)?,
        metric_collapse(seed)?,
        q_bounds(seed)?,
    ])
}
