//! Detection metrics and top@k ranking metrics.
//!
//! Ranking metrics use binary relevance against the ground-truth top-k set
//! `R`: `rel(i) = [pred_i in R]`. With `k' = min(k, |ground truth|)`:
//!
//! * `AP@k    = (1/k') * sum_{i<=k} rel(i) * Prec@i`, `Prec@i = |pred_1..i ∩ R| / i`
//! * `RPrec@k = |pred_1..k' ∩ R| / k'`
//! * `NDCG@k  = sum_{i<=k} rel(i)/log2(i+1) / sum_{i<=k'} 1/log2(i+1)`
//!
//! At `k = 1` all three reduce to the top-1 hit indicator.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::segmentation::StreetClass;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    /// No positive predictions; precision reported as 0.
    pub precision_undefined: bool,
    /// No positive labels; recall reported as 0.
    pub recall_undefined: bool,
}

/// Binary metrics with UPD (label 1) as the positive class.
pub fn detection_metrics(preds: &[u8], labels: &[u8]) -> Result<DetectionMetrics> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Dataset("no predictions to evaluate".into()));
    }
    let mut m = DetectionMetrics::default();
    for (&p, &l) in preds.iter().zip(labels) {
        if p > 1 || l > 1 {
            return Err(Error::InvalidValue(format!("labels must be 0 or 1, got {p}/{l}")));
        }
        match (p, l) {
            (1, 1) => m.tp += 1,
            (1, 0) => m.fp += 1,
            (0, 0) => m.tn += 1,
            _ => m.fn_ += 1,
        }
    }
    let n = preds.len() as f64;
    m.accuracy = (m.tp + m.tn) as f64 / n;
    m.precision_undefined = m.tp + m.fp == 0;
    m.recall_undefined = m.tp + m.fn_ == 0;
    m.precision = if m.precision_undefined { 0.0 } else { m.tp as f64 / (m.tp + m.fp) as f64 };
    m.recall = if m.recall_undefined { 0.0 } else { m.tp as f64 / (m.tp + m.fn_) as f64 };
    m.f1 = if m.precision + m.recall == 0.0 {
        0.0
    } else {
        2.0 * m.precision * m.recall / (m.precision + m.recall)
    };
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingJudgment {
    pub image_id: String,
    pub predicted: Vec<StreetClass>,
    pub ground_truth: Vec<StreetClass>,
}

impl RankingJudgment {
    pub fn new(
        image_id: impl Into<String>,
        predicted: Vec<StreetClass>,
        ground_truth: Vec<StreetClass>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        for (name, list) in [("predicted", &predicted), ("ground-truth", &ground_truth)] {
            let unique: HashSet<_> = list.iter().collect();
            if unique.len() != list.len() {
                return Err(Error::InvalidValue(format!(
                    "{image_id}: duplicate class in {name} ranking"
                )));
            }
        }
        Ok(Self {
            image_id,
            predicted,
            ground_truth,
        })
    }
}

/// Per-image scores at one cut-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageRankScores {
    pub ap: f64,
    pub rprec: f64,
    pub ndcg: f64,
}

pub fn image_scores_at_k(j: &RankingJudgment, k: usize) -> Result<ImageRankScores> {
    if k == 0 {
        return Err(Error::InvalidValue("k must be at least 1".into()));
    }
    let k_eff = k.min(j.ground_truth.len());
    if k_eff == 0 {
        return Err(Error::Dataset(format!("{}: empty ground-truth ranking", j.image_id)));
    }
    let relevant: HashSet<StreetClass> = j.ground_truth[..k_eff].iter().copied().collect();
    let rel: Vec<bool> = (0..k)
        .map(|i| j.predicted.get(i).is_some_and(|c| relevant.contains(c)))
        .collect();

    let mut hits = 0usize;
    let mut ap_sum = 0.0;
    let mut dcg = 0.0;
    for (i, &r) in rel.iter().enumerate() {
        if r {
            hits += 1;
            ap_sum += hits as f64 / (i + 1) as f64;
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..k_eff).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    let top_hits = rel[..k_eff].iter().filter(|&&r| r).count();
    Ok(ImageRankScores {
        ap: ap_sum / k_eff as f64,
        rprec: top_hits as f64 / k_eff as f64,
        ndcg: dcg / idcg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankMetrics {
    pub k: usize,
    pub map: f64,
    pub rprec: f64,
    pub ndcg: f64,
    pub images: usize,
}

/// mAP@k, RPrec@k and NDCG@k averaged over judgments.
pub fn rank_metrics_at_k(judgments: &[RankingJudgment], k: usize) -> Result<RankMetrics> {
    if judgments.is_empty() {
        return Err(Error::Dataset("no ranking judgments to evaluate".into()));
    }
    let mut acc = [0.0; 3];
    for j in judgments {
        let s = image_scores_at_k(j, k)?;
        acc[0] += s.ap;
        acc[1] += s.rprec;
        acc[2] += s.ndcg;
    }
    let n = judgments.len() as f64;
    Ok(RankMetrics {
        k,
        map: acc[0] / n,
        rprec: acc[1] / n,
        ndcg: acc[2] / n,
        images: judgments.len(),
    })
}

/// Metric x Top@k table.
#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub columns: Vec<RankMetrics>,
}

impl RankReport {
    pub fn compute(judgments: &[RankingJudgment], k_max: usize) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::InvalidValue("k_max must be at least 1".into()));
        }
        let columns = (1..=k_max)
            .map(|k| rank_metrics_at_k(judgments, k))
            .collect::<Result<_>>()?;
        Ok(Self { columns })
    }

    fn rows(&self) -> [(&'static str, Vec<f64>); 3] {
        [
            ("mAP", self.columns.iter().map(|c| c.map).collect()),
            ("RPrec", self.columns.iter().map(|c| c.rprec).collect()),
            ("NDCG", self.columns.iter().map(|c| c.ndcg).collect()),
        ]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["metric".to_string()];
        header.extend(self.columns.iter().map(|c| format!("top@{}", c.k)));
        wtr.write_record(&header)?;
        for (name, vals) in self.rows() {
            let mut rec = vec![name.to_string()];
            rec.extend(vals.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<report csv>", e))?;
        Ok(())
    }

    /// Plain-text table with percentages.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "Metrics");
        for c in &self.columns {
            let _ = write!(s, " | {:>8}", format!("Top@{}", c.k));
        }
        s.push('\n');
        let width = 8 + 11 * self.columns.len();
        s.push_str(&"-".repeat(width));
        s.push('\n');
        for (name, vals) in self.rows() {
            let _ = write!(s, "{name:<8}");
            for v in vals {
                let _ = write!(s, " | {:>7.2}%", v * 100.0);
            }
            s.push('\n');
        }
        s
    }
}

impl DetectionMetrics {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn", "precision_undefined"])?;
        wtr.write_record([
            self.accuracy.to_string(),
            self.precision.to_string(),
            self.recall.to_string(),
            self.f1.to_string(),
            self.tp.to_string(),
            self.fp.to_string(),
            self.tn.to_string(),
            self.fn_.to_string(),
            self.precision_undefined.to_string(),
        ])?;
        wtr.flush().map_err(|e| Error::io("<detection csv>", e))?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<10} | {:>9} | {:>9} | {:>9}\n",
            "Accuracy", "Precision", "Recall", "F1"
        );
        s.push_str(&"-".repeat(47));
        s.push('\n');
        let _ = writeln!(
            s,
            "{:>9.2}% | {:>8.2}% | {:>8.2}% | {:>8.2}%",
            self.accuracy * 100.0,
            self.precision * 100.0,
            self.recall * 100.0,
            self.f1 * 100.0
        );
        if self.precision_undefined {
            s.push_str("note: no positive predictions, precision undefined (reported as 0)\n");
        }
        s
    }
}
