//! Perception scores from pairwise comparisons and UPD labeling.
//!
//! For every image and attribute, with `w`, `l`, `t` wins, losses and ties:
//!
//! ```text
//! W_i = w_i / (w_i + l_i + t_i)          L_i = l_i / (w_i + l_i + t_i)
//! Q_i = 10/3 * (W_i + (1/w_i) * sum_{j beaten by i} W_j
//!                   - (1/l_i) * sum_{j that beat i} L_j + 1)
//! ```
//!
//! The sums run over comparisons (an opponent beaten twice counts twice); a
//! correction term is 0 when its count is 0. Q is clamped to `[0, 10]`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Safe,
    Lively,
    Boring,
    Wealthy,
    Depressing,
    Beautiful,
}

impl Attribute {
    pub const ALL: [Attribute; 6] = [
        Attribute::Safe,
        Attribute::Lively,
        Attribute::Boring,
        Attribute::Wealthy,
        Attribute::Depressing,
        Attribute::Beautiful,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Safe => "safe",
            Attribute::Lively => "lively",
            Attribute::Boring => "boring",
            Attribute::Wealthy => "wealthy",
            Attribute::Depressing => "depressing",
            Attribute::Beautiful => "beautiful",
        }
    }

    /// Attributes where a high score signals a worse street.
    pub fn is_negative(self) -> bool {
        matches!(self, Attribute::Boring | Attribute::Depressing)
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidValue(format!("unknown attribute {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Left,
    Right,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    #[serde(rename = "left_id")]
    pub left: String,
    #[serde(rename = "right_id")]
    pub right: String,
    pub attribute: Attribute,
    pub outcome: Outcome,
}

impl ComparisonRecord {
    pub fn new(left: &str, right: &str, attribute: Attribute, outcome: Outcome) -> Result<Self> {
        let rec = Self {
            left: left.to_string(),
            right: right.to_string(),
            attribute,
            outcome,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.left == self.right {
            return Err(Error::InvalidValue(format!(
                "image {} compared with itself",
                self.left
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QScore {
    pub image_id: String,
    pub attribute: Attribute,
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    #[serde(rename = "q_score")]
    pub score: f64,
}

impl QScore {
    pub fn comparisons(&self) -> u64 {
        self.wins + self.losses + self.ties
    }
}

/// The Q formula on aggregate statistics: own win ratio, mean win ratio of
/// beaten opponents, mean loss ratio of opponents that won.
pub fn q_formula(win_ratio: f64, mean_beaten_win: f64, mean_beater_loss: f64) -> f64 {
    (10.0 * (win_ratio + mean_beaten_win - mean_beater_loss + 1.0) / 3.0).clamp(0.0, 10.0)
}

#[derive(Default)]
struct Tally {
    wins: u64,
    losses: u64,
    ties: u64,
    beaten: BTreeMap<String, u64>,
    beaten_by: BTreeMap<String, u64>,
}

pub fn compute_q_scores(records: &[ComparisonRecord], attribute: Attribute) -> Result<Vec<QScore>> {
    let mut tallies: BTreeMap<String, Tally> = BTreeMap::new();
    let mut seen = 0usize;
    for rec in records.iter().filter(|r| r.attribute == attribute) {
        rec.validate()?;
        seen += 1;
        let (winner, loser) = match rec.outcome {
            Outcome::Left => (&rec.left, &rec.right),
            Outcome::Right => (&rec.right, &rec.left),
            Outcome::Tie => {
                tallies.entry(rec.left.clone()).or_default().ties += 1;
                tallies.entry(rec.right.clone()).or_default().ties += 1;
                continue;
            }
        };
        let w = tallies.entry(winner.clone()).or_default();
        w.wins += 1;
        *w.beaten.entry(loser.clone()).or_default() += 1;
        let l = tallies.entry(loser.clone()).or_default();
        l.losses += 1;
        *l.beaten_by.entry(winner.clone()).or_default() += 1;
    }
    if seen == 0 {
        return Err(Error::Dataset(format!("no comparisons for attribute {attribute}")));
    }

    let ratios: HashMap<&str, (f64, f64)> = tallies
        .iter()
        .map(|(id, t)| {
            let n = (t.wins + t.losses + t.ties) as f64;
            (id.as_str(), (t.wins as f64 / n, t.losses as f64 / n))
        })
        .collect();

    Ok(tallies
        .iter()
        .map(|(id, t)| {
            let (win_ratio, _) = ratios[id.as_str()];
            let beaten = if t.wins == 0 {
                0.0
            } else {
                t.beaten.iter().map(|(j, &c)| c as f64 * ratios[j.as_str()].0).sum::<f64>() / t.wins as f64
            };
            let beaters = if t.losses == 0 {
                0.0
            } else {
                t.beaten_by.iter().map(|(j, &c)| c as f64 * ratios[j.as_str()].1).sum::<f64>()
                    / t.losses as f64
            };
            QScore {
                image_id: id.clone(),
                attribute,
                wins: t.wins,
                losses: t.losses,
                ties: t.ties,
                score: q_formula(win_ratio, beaten, beaters),
            }
        })
        .collect())
}

pub fn compute_all_q_scores(records: &[ComparisonRecord]) -> Result<Vec<QScore>> {
    let mut out = Vec::new();
    for a in Attribute::ALL {
        if records.iter().any(|r| r.attribute == a) {
            out.extend(compute_q_scores(records, a)?);
        } else {
            log::warn!("no comparisons for attribute {a}");
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelConfig {
    /// Percentage of lowest combined scores labeled UPD.
    pub low_pct: f64,
    /// Images at or above this percentile are labeled non-UPD.
    pub high_pct: f64,
    /// Images need strictly more total ratings than this.
    pub min_votes: u64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            low_pct: 5.0,
            high_pct: 95.0,
            min_votes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image_id: String,
    /// 1 = UPD, 0 = non-UPD, `None` = between the thresholds.
    pub label: Option<u8>,
    pub combined_score: f64,
    /// Q per attribute in [`Attribute::ALL`] order.
    pub per_attribute: [f64; 6],
    pub votes: u64,
}

/// Mean of the six Q scores with negative attributes flipped to `10 - Q`.
pub fn combined_score(per_attribute: &[f64; 6]) -> f64 {
    Attribute::ALL
        .iter()
        .zip(per_attribute)
        .map(|(a, &q)| if a.is_negative() { 10.0 - q } else { q })
        .sum::<f64>()
        / 6.0
}

/// Labels images from their per-attribute Q scores.
///
/// Eligible images have a score for all six attributes and more than
/// `min_votes` ratings in total. They are ordered by combined score (ties by
/// id); the lowest `floor(n * low_pct / 100)` become UPD and the highest
/// `floor(n * (100 - high_pct) / 100)` become non-UPD.
pub fn label_dataset(scores: &[QScore], cfg: &LabelConfig) -> Result<Vec<LabeledImage>> {
    if !(0.0..=100.0).contains(&cfg.low_pct)
        || !(0.0..=100.0).contains(&cfg.high_pct)
        || cfg.low_pct > cfg.high_pct
    {
        return Err(Error::Config(format!(
            "percentiles must satisfy 0 <= low ({}) <= high ({}) <= 100",
            cfg.low_pct, cfg.high_pct
        )));
    }
    let mut by_image: BTreeMap<&str, ([Option<f64>; 6], u64)> = BTreeMap::new();
    for q in scores {
        let slot = by_image.entry(q.image_id.as_str()).or_insert(([None; 6], 0));
        let idx = Attribute::ALL.iter().position(|a| *a == q.attribute).unwrap();
        slot.0[idx] = Some(q.score);
        slot.1 += q.comparisons();
    }

    let mut eligible: Vec<LabeledImage> = Vec::new();
    for (id, (qs, votes)) in by_image {
        if votes <= cfg.min_votes {
            continue;
        }
        let Some(per_attribute) = complete(&qs) else {
            log::warn!("image {id} lacks scores for some attributes; skipped");
            continue;
        };
        eligible.push(LabeledImage {
            image_id: id.to_string(),
            label: None,
            combined_score: combined_score(&per_attribute),
            per_attribute,
            votes,
        });
    }
    eligible.sort_by(|a, b| {
        a.combined_score
            .total_cmp(&b.combined_score)
            .then_with(|| a.image_id.cmp(&b.image_id))
    });

    let n = eligible.len();
    let n_low = (n as f64 * cfg.low_pct / 100.0).floor() as usize;
    let n_high = (n as f64 * (100.0 - cfg.high_pct) / 100.0).floor() as usize;
    for img in &mut eligible[..n_low] {
        img.label = Some(1);
    }
    for img in &mut eligible[n - n_high..] {
        img.label = Some(0);
    }
    if n_low < 2 || n_high < 2 {
        return Err(Error::Dataset(format!(
            "{n} eligible images give {n_low} UPD and {n_high} non-UPD labels; need at least 2 of each"
        )));
    }
    Ok(eligible)
}

fn complete(qs: &[Option<f64>; 6]) -> Option<[f64; 6]> {
    let mut out = [0.0; 6];
    for (o, q) in out.iter_mut().zip(qs) {
        *o = (*q)?;
    }
    Some(out)
}

pub fn read_comparisons_csv<R: Read>(input: R) -> Result<Vec<ComparisonRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let rec: ComparisonRecord = row?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_q_scores_csv<W: Write>(out: W, scores: &[QScore]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    wtr.write_record(["image_id", "attribute", "wins", "losses", "ties", "q_score"])?;
    for q in scores {
        wtr.serialize(q)?;
    }
    wtr.flush().map_err(|e| Error::io("<q-score csv>", e))?;
    Ok(())
}

pub fn read_q_scores_csv<R: Read>(input: R) -> Result<Vec<QScore>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_labels_csv<W: Write>(out: W, labels: &[LabeledImage]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["image_id", "label", "combined_score"];
    header.extend(Attribute::ALL.iter().map(|a| a.name()));
    wtr.write_record(&header)?;
    for img in labels {
        let mut rec = vec![
            img.image_id.clone(),
            img.label.map(|l| l.to_string()).unwrap_or_default(),
            img.combined_score.to_string(),
        ];
        rec.extend(img.per_attribute.iter().map(|q| q.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<labels csv>", e))?;
    Ok(())
}

/// Reads `image_id,label,...` rows and returns the labeled ones.
pub fn read_labels_csv<R: Read>(input: R) -> Result<BTreeMap<String, u8>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let id_col = headers.iter().position(|h| h == "image_id");
    let label_col = headers.iter().position(|h| h == "label");
    let (Some(id_col), Some(label_col)) = (id_col, label_col) else {
        return Err(Error::Schema("labels CSV needs image_id and label columns".into()));
    };
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let label = rec.get(label_col).unwrap_or("");
        if label.is_empty() {
            continue;
        }
        let label: u8 = match label {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::InvalidValue(format!("label must be 0 or 1, got {other:?}"))),
        };
        out.insert(rec.get(id_col).unwrap_or("").to_string(), label);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(l: &str, r: &str, o: Outcome) -> ComparisonRecord {
        ComparisonRecord::new(l, r, Attribute::Safe, o).unwrap()
    }

    #[test]
    fn formula_extremes_are_exact() {
        assert_eq!(q_formula(1.0, 1.0, 0.0), 10.0);
        assert_eq!(q_formula(0.0, 0.0, 1.0), 0.0);
        assert_eq!(q_formula(0.5, 0.5, 0.5), 10.0 * 1.5 / 3.0);
    }

    #[test]
    fn single_pair_is_symmetric() {
        let recs = [rec("a", "b", Outcome::Left), rec("a", "b", Outcome::Right)];
        let q = compute_q_scores(&recs, Attribute::Safe).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].score, q[1].score);
        // W = L = 0.5 for both: 10/3 * (0.5 + 0.5 - 0.5 + 1)
        assert!((q[0].score - 5.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_chain() {
        // a beats b, b beats c.
        let recs = [rec("a", "b", Outcome::Left), rec("b", "c", Outcome::Left)];
        let q = compute_q_scores(&recs, Attribute::Safe).unwrap();
        let get = |id: &str| q.iter().find(|s| s.image_id == id).unwrap().score;
        // a: W=1, beaten b has W=0.5 -> 10/3 * (1 + 0.5 + 1) = 25/3
        assert!((get("a") - 25.0 / 3.0).abs() < 1e-12);
        // b: W=0.5, beat c (W=0), lost to a (L=0) -> 10/3 * 1.5 = 5
        assert!((get("b") - 5.0).abs() < 1e-12);
        // c: W=0, lost to b (L_b = 0.5) -> 10/3 * (0 - 0.5 + 1) = 5/3
        assert!((get("c") - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ties_and_other_attributes() {
        let mut recs = vec![rec("a", "b", Outcome::Tie)];
        recs.push(ComparisonRecord::new("a", "b", Attribute::Lively, Outcome::Left).unwrap());
        let q = compute_q_scores(&recs, Attribute::Safe).unwrap();
        assert!(q.iter().all(|s| s.ties == 1 && s.wins == 0 && (s.score - 10.0 / 3.0).abs() < 1e-12));
        assert!(compute_q_scores(&recs, Attribute::Boring).is_err());
        assert!(ComparisonRecord::new("a", "a", Attribute::Safe, Outcome::Tie).is_err());
    }

    #[test]
    fn duplication_is_exactly_invariant() {
        let ids = ["a", "b", "c", "d", "e"];
        let mut recs = Vec::new();
        for i in 0..40usize {
            let (l, r) = (ids[i % 5], ids[(i * 3 + 1) % 5]);
            if l == r {
                continue;
            }
            let o = [Outcome::Left, Outcome::Right, Outcome::Tie][(i * 7) % 3];
            recs.push(rec(l, r, o));
        }
        let once = compute_q_scores(&recs, Attribute::Safe).unwrap();
        let doubled: Vec<_> = recs.iter().chain(recs.iter()).cloned().collect();
        let twice = compute_q_scores(&doubled, Attribute::Safe).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(a.score, b.score);
        }
    }

    fn synthetic_scores(n: usize, votes: u64) -> Vec<QScore> {
        let mut out = Vec::new();
        for i in 0..n {
            for a in Attribute::ALL {
                let v = i as f64 / (n - 1) as f64 * 10.0;
                out.push(QScore {
                    image_id: format!("img{i:03}"),
                    attribute: a,
                    wins: votes / 6 + 1,
                    losses: 0,
                    ties: 0,
                    score: if a.is_negative() { 10.0 - v } else { v },
                });
            }
        }
        out
    }

    #[test]
    fn percentile_labels_on_uniform_grid() {
        let labels = label_dataset(&synthetic_scores(100, 120), &LabelConfig::default()).unwrap();
        assert_eq!(labels.len(), 100);
        let upd: Vec<_> = labels.iter().filter(|l| l.label == Some(1)).collect();
        let non: Vec<_> = labels.iter().filter(|l| l.label == Some(0)).collect();
        assert_eq!((upd.len(), non.len()), (5, 5));
        assert!(upd.iter().all(|l| l.image_id.as_str() < "img005"));
        assert!(non.iter().all(|l| l.image_id.as_str() >= "img095"));
    }

    #[test]
    fn median_thresholds_label_everything() {
        let cfg = LabelConfig { low_pct: 50.0, high_pct: 50.0, ..Default::default() };
        let labels = label_dataset(&synthetic_scores(100, 120), &cfg).unwrap();
        assert!(labels.iter().all(|l| l.label.is_some()));
    }

    #[test]
    fn min_votes_is_strict() {
        let mut scores = synthetic_scores(100, 120);
        // img000 gets 99 ratings in total.
        for q in scores.iter_mut().filter(|q| q.image_id == "img000") {
            q.wins = if q.attribute == Attribute::Safe { 94 } else { 1 };
        }
        let labels = label_dataset(&scores, &LabelConfig::default()).unwrap();
        assert!(labels.iter().all(|l| l.image_id != "img000"));
        assert_eq!(labels.len(), 99);
    }

    #[test]
    fn too_few_labels_is_error() {
        assert!(matches!(
            label_dataset(&synthetic_scores(20, 120), &LabelConfig::default()),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn csv_io() {
        let text = "left_id,right_id,attribute,outcome\na,b,safe,left\nb,c,boring,tie\n";
        let recs = read_comparisons_csv(text.as_bytes()).unwrap();
        assert_eq!(recs[1].attribute, Attribute::Boring);
        assert_eq!(recs[1].outcome, Outcome::Tie);
        let q = compute_all_q_scores(&recs).unwrap();
        let mut buf = Vec::new();
        write_q_scores_csv(&mut buf, &q).unwrap();
        assert_eq!(read_q_scores_csv(&buf[..]).unwrap(), q);
        assert!(read_comparisons_csv("left_id,right_id,attribute,outcome\na,b,ugly,left\n".as_bytes()).is_err());
    }
}
