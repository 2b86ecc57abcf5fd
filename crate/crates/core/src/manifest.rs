//! Image manifests: one CSV row per street-view image.
//!
//! Columns (header required, order free, only `image_path` mandatory):
//!
//! ```text
//! image_id,image_path,segmentation_path,label,gt_ranking,lat,lon,morphology
//! ```
//!
//! `image_id` defaults to the file stem of `image_path`. `gt_ranking` lists
//! class ids or names separated by `;`, most contributing first. Relative
//! paths resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::morphology::MorphologyBin;
use crate::segmentation::StreetClass;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub image_path: PathBuf,
    pub segmentation_path: Option<PathBuf>,
    pub label: Option<u8>,
    pub gt_ranking: Option<Vec<StreetClass>>,
    pub location: Option<(f64, f64)>,
    pub morphology: Option<MorphologyBin>,
}

#[derive(Debug, Deserialize)]
struct Row {
    #[serde(default)]
    image_id: Option<String>,
    image_path: String,
    #[serde(default)]
    segmentation_path: Option<String>,
    #[serde(default)]
    label: Option<u8>,
    #[serde(default)]
    gt_ranking: Option<String>,
    #[serde(default)]
    lat: Option<f64>,
    #[serde(default)]
    lon: Option<f64>,
    #[serde(default)]
    morphology: Option<String>,
}

pub fn parse_class_list(text: &str) -> Result<Vec<StreetClass>> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses manifest text; `base` is the directory relative paths resolve against.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        let at = |msg: String| Error::Schema(format!("manifest row {}: {msg}", line + 1));
        let image_path = resolve(base, &row.image_path);
        let image_id = match row.image_id.filter(|s| !s.is_empty()) {
            Some(id) => id,
            None => image_path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| at(format!("cannot derive an id from {:?}", row.image_path)))?
                .to_string(),
        };
        if !seen.insert(image_id.clone()) {
            return Err(at(format!("duplicate image id {image_id:?}")));
        }
        if let Some(l) = row.label {
            if l > 1 {
                return Err(at(format!("label must be 0 or 1, got {l}")));
            }
        }
        let location = match (row.lat, row.lon) {
            (Some(lat), Some(lon)) => Some((lat, lon)),
            (None, None) => None,
            _ => return Err(at("lat and lon must be given together".into())),
        };
        let gt_ranking = match row.gt_ranking.filter(|s| !s.is_empty()) {
            Some(s) => Some(parse_class_list(&s).map_err(|e| at(e.to_string()))?),
            None => None,
        };
        let morphology = match row.morphology.filter(|s| !s.is_empty()) {
            Some(s) => Some(s.parse().map_err(|e: Error| at(e.to_string()))?),
            None => None,
        };
        out.push(ManifestEntry {
            image_id,
            image_path,
            segmentation_path: row
                .segmentation_path
                .filter(|s| !s.is_empty())
                .map(|s| resolve(base, &s)),
            label: row.label,
            gt_ranking,
            location,
            morphology,
        });
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_and_full_rows() {
        let text = "image_path,segmentation_path,label,gt_ranking,lat,lon,morphology\n\
                    imgs/a.png,,,,,,\n\
                    /abs/b.png,seg/b.png,1,sidewalk;8,34.1,-118.2,low\n";
        let m = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(m[0].image_id, "a");
        assert_eq!(m[0].image_path, PathBuf::from("/data/imgs/a.png"));
        assert_eq!(m[0].segmentation_path, None);
        assert_eq!(m[1].image_path, PathBuf::from("/abs/b.png"));
        assert_eq!(m[1].segmentation_path, Some(PathBuf::from("/data/seg/b.png")));
        assert_eq!(m[1].gt_ranking, Some(vec![StreetClass::Sidewalk, StreetClass::Road]));
        assert_eq!(m[1].location, Some((34.1, -118.2)));
        assert_eq!(m[1].morphology, Some(MorphologyBin::Low));
    }

    #[test]
    fn rejects_bad_rows() {
        let base = Path::new(".");
        assert!(parse_manifest("image_path,label\na.png,2\n", base).is_err());
        assert!(parse_manifest("image_path\na.png\nx/a.png\n", base).is_err());
        assert!(parse_manifest("image_path,lat\na.png,3.0\n", base).is_err());
        assert!(parse_manifest("image_path,gt_ranking\na.png,13\n", base).is_err());
        assert!(parse_manifest("image_path\n", base).unwrap().is_empty());
    }
}
