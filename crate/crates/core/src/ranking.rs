//! Semantic factor ranking: each class present in the segmentation is
//! scored by the mean activation over its pixels,
//! `density_i = sum_j mask_i[j] * act[j] / N_i`, and classes are sorted by
//! density (descending, ties by ascending class id). Void pixels are never
//! ranked.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::ActivationMap;
use crate::segmentation::{SegmentationMap, StreetClass, NUM_CLASSES};

/// Smallest region considered by default: 0.1% of the image area.
pub fn default_min_pixels(height: usize, width: usize) -> usize {
    ((height * width) as f64 * 0.001).ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorEntry {
    pub class: StreetClass,
    pub density: f64,
    pub pixel_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FactorRanking {
    pub image_id: String,
    pub entries: Vec<FactorEntry>,
    /// Set when no class reached the pixel threshold.
    pub empty_warning: bool,
}

impl FactorRanking {
    pub fn classes(&self) -> Vec<StreetClass> {
        self.entries.iter().map(|e| e.class).collect()
    }

    pub fn top(&self) -> Option<StreetClass> {
        self.entries.first().map(|e| e.class)
    }

    pub fn truncated(&self, k: usize) -> Self {
        Self {
            image_id: self.image_id.clone(),
            entries: self.entries.iter().take(k).cloned().collect(),
            empty_warning: self.empty_warning,
        }
    }
}

pub fn rank_factors(
    seg: &SegmentationMap,
    act: &ActivationMap,
    min_pixels: usize,
) -> Result<FactorRanking> {
    if (seg.height(), seg.width()) != (act.height(), act.width()) {
        return Err(Error::Dimension(format!(
            "segmentation {}x{} and activation map {}x{} differ",
            seg.height(),
            seg.width(),
            act.height(),
            act.width()
        )));
    }
    let mut sums = [0.0f64; NUM_CLASSES + 1];
    let mut counts = [0usize; NUM_CLASSES + 1];
    for (&id, &a) in seg.data().iter().zip(act.data()) {
        sums[id as usize] += a;
        counts[id as usize] += 1;
    }
    let mut entries: Vec<FactorEntry> = StreetClass::ALL
        .into_iter()
        .filter_map(|class| {
            let i = class.id() as usize;
            let n = counts[i];
            (n > 0 && n >= min_pixels).then(|| FactorEntry {
                class,
                density: sums[i] / n as f64,
                pixel_count: n,
            })
        })
        .collect();
    entries.sort_by(|a, b| b.density.total_cmp(&a.density).then(a.class.cmp(&b.class)));
    let empty_warning = entries.is_empty();
    if empty_warning {
        log::warn!("no class reaches {min_pixels} pixels; ranking is empty");
    }
    Ok(FactorRanking {
        image_id: String::new(),
        entries,
        empty_warning,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct RankingRow {
    image_id: String,
    rank: usize,
    class_id: u8,
    class_name: String,
    density: f64,
    pixel_count: usize,
}

/// Writes `image_id,rank,class_id,class_name,density,pixel_count` rows, ranks from 1.
pub fn write_rankings_csv<W: Write>(out: W, rankings: &[FactorRanking]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    wtr.write_record(["image_id", "rank", "class_id", "class_name", "density", "pixel_count"])?;
    for r in rankings {
        for (i, e) in r.entries.iter().enumerate() {
            wtr.serialize(RankingRow {
                image_id: r.image_id.clone(),
                rank: i + 1,
                class_id: e.class.id(),
                class_name: e.class.name().to_string(),
                density: e.density,
                pixel_count: e.pixel_count,
            })?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<rankings csv>", e))?;
    Ok(())
}

/// Reads rankings back, grouped by image id in first-appearance order and
/// ordered by the `rank` column within each image.
pub fn read_rankings_csv<R: Read>(input: R) -> Result<Vec<FactorRanking>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut grouped: Vec<(String, Vec<(usize, FactorEntry)>)> = Vec::new();
    for row in rdr.deserialize() {
        let row: RankingRow = row?;
        let class = StreetClass::from_id(row.class_id)
            .ok_or_else(|| Error::Schema(format!("unknown class id {} in rankings", row.class_id)))?;
        let entry = FactorEntry {
            class,
            density: row.density,
            pixel_count: row.pixel_count,
        };
        match grouped.iter_mut().find(|(id, _)| *id == row.image_id) {
            Some((_, entries)) => entries.push((row.rank, entry)),
            None => grouped.push((row.image_id, vec![(row.rank, entry)])),
        }
    }
    Ok(grouped
        .into_iter()
        .map(|(image_id, mut entries)| {
            entries.sort_by_key(|(rank, _)| *rank);
            FactorRanking {
                image_id,
                entries: entries.into_iter().map(|(_, e)| e).collect(),
                empty_warning: false,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_activation_tie_break() {
        let seg = SegmentationMap::new(2, 2, vec![8, 2, 8, 2]).unwrap();
        let act = ActivationMap::new(2, 2, vec![1.0; 4]).unwrap();
        let r = rank_factors(&seg, &act, 1).unwrap();
        assert_eq!(r.classes(), vec![StreetClass::Building, StreetClass::Road]);
        assert!(r.entries.iter().all(|e| e.density == 1.0));
    }

    #[test]
    fn hand_example() {
        // A = sidewalk {0.8, 0.6}, B = fence {0.9, 0.1, 0.2}
        let seg = SegmentationMap::new(1, 5, vec![1, 1, 4, 4, 4]).unwrap();
        let act = ActivationMap::new(1, 5, vec![0.8, 0.6, 0.9, 0.1, 0.2]).unwrap();
        let r = rank_factors(&seg, &act, 0).unwrap();
        assert_eq!(r.classes(), vec![StreetClass::Sidewalk, StreetClass::Fence]);
        assert!((r.entries[0].density - 0.7).abs() < 1e-15);
        assert!((r.entries[1].density - 0.4).abs() < 1e-15);
        assert_eq!(r.entries[1].pixel_count, 3);
    }

    #[test]
    fn void_and_small_regions_skipped() {
        let seg = SegmentationMap::new(1, 4, vec![0, 0, 0, 5]).unwrap();
        let act = ActivationMap::new(1, 4, vec![1.0, 1.0, 1.0, 0.5]).unwrap();
        let r = rank_factors(&seg, &act, 2).unwrap();
        assert!(r.entries.is_empty() && r.empty_warning);
        let r = rank_factors(&seg, &act, 1).unwrap();
        assert_eq!(r.classes(), vec![StreetClass::Motorcycle]);
    }

    #[test]
    fn dimension_mismatch() {
        let seg = SegmentationMap::filled(2, 2, StreetClass::Sky);
        let act = ActivationMap::new(1, 4, vec![0.0; 4]).unwrap();
        assert!(matches!(rank_factors(&seg, &act, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn csv_roundtrip() {
        let seg = SegmentationMap::new(1, 5, vec![1, 1, 4, 4, 4]).unwrap();
        let act = ActivationMap::new(1, 5, vec![0.8, 0.6, 0.9, 0.1, 0.2]).unwrap();
        let mut r = rank_factors(&seg, &act, 0).unwrap();
        r.image_id = "img_001".into();
        let mut buf = Vec::new();
        write_rankings_csv(&mut buf, &[r.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("image_id,rank,class_id,class_name,density,pixel_count\n"));
        assert!(text.contains("img_001,1,1,sidewalk,0.7"));
        assert_eq!(read_rankings_csv(&buf[..]).unwrap(), vec![r]);
    }
}
