//! Street-canyon (`h_c / w_c`) bins and per-bin evaluation.
//!
//! Bins follow the table schema `h/w = 0`, `0 < h/w < 1`, `1 < h/w < 2` and
//! `h/w > 3`; values of exactly 1 or 2 go to the lower bin, and ratios in
//! `(2, 3]` have no row and land in [`MorphologyBin::Unbinned`].
//!
//! [`estimate_ratio`] is a segmentation-based proxy. Bins supplied in the
//! manifest take precedence over it.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::{detection_metrics, DetectionMetrics, RankReport, RankingJudgment};
use crate::segmentation::{SegmentationMap, StreetClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MorphologyBin {
    Open,
    Low,
    Mid,
    Deep,
    Unbinned,
}

impl MorphologyBin {
    pub const REPORTED: [MorphologyBin; 4] = [
        MorphologyBin::Open,
        MorphologyBin::Low,
        MorphologyBin::Mid,
        MorphologyBin::Deep,
    ];

    pub fn from_ratio(ratio: f64) -> Self {
        match ratio {
            r if !r.is_finite() || r < 0.0 => MorphologyBin::Unbinned,
            r if r == 0.0 => MorphologyBin::Open,
            r if r <= 1.0 => MorphologyBin::Low,
            r if r <= 2.0 => MorphologyBin::Mid,
            r if r > 3.0 => MorphologyBin::Deep,
            _ => MorphologyBin::Unbinned,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MorphologyBin::Open => "open",
            MorphologyBin::Low => "low",
            MorphologyBin::Mid => "mid",
            MorphologyBin::Deep => "deep",
            MorphologyBin::Unbinned => "unbinned",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MorphologyBin::Open => "h/w=0",
            MorphologyBin::Low => "0<h/w<1",
            MorphologyBin::Mid => "1<h/w<2",
            MorphologyBin::Deep => "h/w>3",
            MorphologyBin::Unbinned => "unbinned",
        }
    }
}

impl fmt::Display for MorphologyBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MorphologyBin {
    type Err = Error;

    /// Accepts a bin name or a raw ratio.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if let Some(b) = [
            MorphologyBin::Open,
            MorphologyBin::Low,
            MorphologyBin::Mid,
            MorphologyBin::Deep,
            MorphologyBin::Unbinned,
        ]
        .into_iter()
        .find(|b| b.name() == t || b.label() == t)
        {
            return Ok(b);
        }
        t.parse::<f64>()
            .map(Self::from_ratio)
            .map_err(|_| Error::InvalidValue(format!("unknown morphology bin {s:?}")))
    }
}

fn longest_run(values: impl Iterator<Item = bool>) -> usize {
    let (mut best, mut cur) = (0, 0);
    for v in values {
        cur = if v { cur + 1 } else { 0 };
        best = best.max(cur);
    }
    best
}

fn median(mut xs: Vec<usize>) -> f64 {
    xs.sort_unstable();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2] as f64
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) as f64 / 2.0
    }
}

/// Proxy canyon ratio: median tallest building run over columns that contain
/// building, divided by the median widest road run over bottom-third rows
/// that contain road. `Some(0.0)` without buildings, `None` without road in
/// the bottom third.
pub fn estimate_ratio(seg: &SegmentationMap) -> Option<f64> {
    let (h, w) = (seg.height(), seg.width());
    let road = StreetClass::Road.id();
    let building = StreetClass::Building.id();

    let road_runs: Vec<usize> = (h - h / 3..h)
        .map(|y| longest_run((0..w).map(|x| seg.get(y, x) == road)))
        .filter(|&r| r > 0)
        .collect();
    if road_runs.is_empty() {
        return None;
    }
    let building_runs: Vec<usize> = (0..w)
        .map(|x| longest_run((0..h).map(|y| seg.get(y, x) == building)))
        .filter(|&r| r > 0)
        .collect();
    if building_runs.is_empty() {
        return Some(0.0);
    }
    Some(median(building_runs) / median(road_runs))
}

pub fn estimate_bin(seg: &SegmentationMap) -> MorphologyBin {
    estimate_ratio(seg).map_or(MorphologyBin::Unbinned, MorphologyBin::from_ratio)
}

/// One image's evaluation inputs.
#[derive(Debug, Clone)]
pub struct StratifiedItem {
    pub bin: MorphologyBin,
    pub prediction: Option<u8>,
    pub label: Option<u8>,
    pub judgment: Option<RankingJudgment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinRow {
    pub bin: MorphologyBin,
    pub images: usize,
    pub detection: Option<DetectionMetrics>,
    pub ranking: Option<RankReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedReport {
    pub rows: Vec<BinRow>,
    pub unbinned: usize,
    pub notices: Vec<String>,
    pub k_max: usize,
}

pub fn stratified_report(items: &[StratifiedItem], k_max: usize) -> Result<StratifiedReport> {
    let mut rows = Vec::new();
    let mut notices = Vec::new();
    for bin in MorphologyBin::REPORTED {
        let members: Vec<&StratifiedItem> = items.iter().filter(|i| i.bin == bin).collect();
        if members.is_empty() {
            let msg = format!("bin {} has no images; row omitted", bin.label());
            log::info!("{msg}");
            notices.push(msg);
            continue;
        }
        let (preds, labels): (Vec<u8>, Vec<u8>) = members
            .iter()
            .filter_map(|i| Some((i.prediction?, i.label?)))
            .unzip();
        let detection = if preds.is_empty() {
            None
        } else {
            Some(detection_metrics(&preds, &labels)?)
        };
        let judgments: Vec<RankingJudgment> =
            members.iter().filter_map(|i| i.judgment.clone()).collect();
        let ranking = if judgments.is_empty() {
            None
        } else {
            Some(RankReport::compute(&judgments, k_max)?)
        };
        rows.push(BinRow {
            bin,
            images: members.len(),
            detection,
            ranking,
        });
    }
    let unbinned = items.iter().filter(|i| i.bin == MorphologyBin::Unbinned).count();
    Ok(StratifiedReport {
        rows,
        unbinned,
        notices,
        k_max,
    })
}

impl StratifiedReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["bin", "images", "accuracy", "precision", "recall", "f1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=self.k_max).map(|k| format!("map@{k}")));
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.bin.label().to_string(), row.images.to_string()];
            match &row.detection {
                Some(d) => rec.extend([d.accuracy, d.precision, d.recall, d.f1].map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
            match &row.ranking {
                Some(r) => rec.extend(r.columns.iter().map(|c| c.map.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), self.k_max)),
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<stratified csv>", e))?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<10} | {:>6} | {:>8} | {:>9} | {:>8} | {:>8}",
            "h/w", "images", "Accuracy", "Precision", "Recall", "F1"
        );
        for k in 1..=self.k_max {
            s.push_str(&format!(" | {:>8}", format!("mAP@{k}")));
        }
        s.push('\n');
        let pct = |v: f64| format!("{:.2}%", v * 100.0);
        for row in &self.rows {
            s.push_str(&format!("{:<10} | {:>6}", row.bin.label(), row.images));
            match &row.detection {
                Some(d) => s.push_str(&format!(
                    " | {:>8} | {:>9} | {:>8} | {:>8}",
                    pct(d.accuracy),
                    pct(d.precision),
                    pct(d.recall),
                    pct(d.f1)
                )),
                None => s.push_str(&format!(" | {:>8} | {:>9} | {:>8} | {:>8}", "-", "-", "-", "-")),
            }
            for k in 0..self.k_max {
                let v = row.ranking.as_ref().map_or("-".to_string(), |r| pct(r.columns[k].map));
                s.push_str(&format!(" | {v:>8}"));
            }
            s.push('\n');
        }
        if self.unbinned > 0 {
            s.push_str(&format!("({} unbinned images excluded)\n", self.unbinned));
        }
        for n in &self.notices {
            s.push_str(&format!("note: {n}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use StreetClass::*;

    fn scene(h: usize, w: usize, paint: impl Fn(usize, usize) -> StreetClass) -> SegmentationMap {
        let data = (0..h * w).map(|i| paint(i / w, i % w).id()).collect();
        SegmentationMap::new(h, w, data).unwrap()
    }

    #[test]
    fn bins_from_ratio() {
        assert_eq!(MorphologyBin::from_ratio(0.0), MorphologyBin::Open);
        assert_eq!(MorphologyBin::from_ratio(0.5), MorphologyBin::Low);
        assert_eq!(MorphologyBin::from_ratio(1.0), MorphologyBin::Low);
        assert_eq!(MorphologyBin::from_ratio(1.5), MorphologyBin::Mid);
        assert_eq!(MorphologyBin::from_ratio(2.0), MorphologyBin::Mid);
        assert_eq!(MorphologyBin::from_ratio(2.5), MorphologyBin::Unbinned);
        assert_eq!(MorphologyBin::from_ratio(3.0), MorphologyBin::Unbinned);
        assert_eq!(MorphologyBin::from_ratio(3.5), MorphologyBin::Deep);
        assert_eq!("deep".parse::<MorphologyBin>().unwrap(), MorphologyBin::Deep);
        assert_eq!("0.25".parse::<MorphologyBin>().unwrap(), MorphologyBin::Low);
        assert!("tall".parse::<MorphologyBin>().is_err());
    }

    #[test]
    fn no_buildings_is_open() {
        let seg = scene(30, 30, |y, _| if y >= 20 { Road } else { Sky });
        assert_eq!(estimate_ratio(&seg), Some(0.0));
        assert_eq!(estimate_bin(&seg), MorphologyBin::Open);
    }

    #[test]
    fn all_sky_is_unbinned() {
        assert_eq!(estimate_bin(&SegmentationMap::filled(12, 12, Sky)), MorphologyBin::Unbinned);
    }

    #[test]
    fn flanked_road_ratio_one() {
        // 300 x 150: buildings 100 px tall in the outer columns, a 100 px wide
        // road band in the middle columns of the bottom rows.
        let seg = scene(150, 300, |y, x| {
            let side = !(100..200).contains(&x);
            if side && (50..150).contains(&y) {
                Building
            } else if !side && y >= 100 {
                Road
            } else {
                Sky
            }
        });
        assert_eq!(estimate_ratio(&seg), Some(1.0));
        assert_eq!(estimate_bin(&seg), MorphologyBin::Low);
    }

    fn item(bin: MorphologyBin, p: u8, l: u8) -> StratifiedItem {
        StratifiedItem { bin, prediction: Some(p), label: Some(l), judgment: None }
    }

    #[test]
    fn per_bin_accuracy() {
        let items = [
            item(MorphologyBin::Open, 1, 1),
            item(MorphologyBin::Open, 0, 1),
            item(MorphologyBin::Deep, 1, 1),
            item(MorphologyBin::Deep, 0, 0),
        ];
        let r = stratified_report(&items, 2).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[0].detection.unwrap().accuracy, 0.5);
        assert_eq!(r.rows[1].detection.unwrap().accuracy, 1.0);
        assert_eq!(r.notices.len(), 2);
        assert!(r.to_text().contains("50.00%"));
    }

    #[test]
    fn single_bin_matches_unstratified() {
        let items: Vec<_> = (0..6).map(|i| item(MorphologyBin::Mid, (i % 2) as u8, (i % 3 == 0) as u8)).collect();
        let r = stratified_report(&items, 1).unwrap();
        let preds: Vec<u8> = items.iter().map(|i| i.prediction.unwrap()).collect();
        let labels: Vec<u8> = items.iter().map(|i| i.label.unwrap()).collect();
        assert_eq!(r.rows[0].detection.unwrap(), detection_metrics(&preds, &labels).unwrap());
    }
}
