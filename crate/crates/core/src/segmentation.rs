//! The 12-class street-scene schema and ingestion of externally produced
//! segmentation rasters.
//!
//! A segmentation file is an 8-bit single-channel PNG whose pixel values are
//! class ids (`0` = void, `1..=12` per [`StreetClass`]). Rasters written with
//! a different taxonomy are mapped through an [`IdRemap`]; unmapped source
//! ids become void.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 12;
pub const VOID: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum StreetClass {
    Sidewalk = 1,
    Building = 2,
    Vehicle = 3,
    Fence = 4,
    Motorcycle = 5,
    Person = 6,
    Pole = 7,
    Road = 8,
    Sky = 9,
    TrafficSign = 10,
    Vegetation = 11,
    Wall = 12,
}

impl StreetClass {
    pub const ALL: [StreetClass; NUM_CLASSES] = [
        StreetClass::Sidewalk,
        StreetClass::Building,
        StreetClass::Vehicle,
        StreetClass::Fence,
        StreetClass::Motorcycle,
        StreetClass::Person,
        StreetClass::Pole,
        StreetClass::Road,
        StreetClass::Sky,
        StreetClass::TrafficSign,
        StreetClass::Vegetation,
        StreetClass::Wall,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        (1..=NUM_CLASSES as u8)
            .contains(&id)
            .then(|| Self::ALL[id as usize - 1])
    }

    pub fn name(self) -> &'static str {
        match self {
            StreetClass::Sidewalk => "sidewalk",
            StreetClass::Building => "building",
            StreetClass::Vehicle => "vehicle",
            StreetClass::Fence => "fence",
            StreetClass::Motorcycle => "motorcycle",
            StreetClass::Person => "person",
            StreetClass::Pole => "pole",
            StreetClass::Road => "road",
            StreetClass::Sky => "sky",
            StreetClass::TrafficSign => "traffic sign",
            StreetClass::Vegetation => "vegetation",
            StreetClass::Wall => "wall",
        }
    }
}

impl fmt::Display for StreetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StreetClass {
    type Err = Error;

    /// Accepts a numeric id or a class name (`traffic sign`, `traffic_sign`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(id) = s.parse::<u8>() {
            return Self::from_id(id).ok_or_else(|| Error::Schema(format!("unknown class id {id}")));
        }
        let norm = s.to_ascii_lowercase().replace(['_', '-'], " ");
        Self::ALL
            .into_iter()
            .find(|c| c.name() == norm)
            .ok_or_else(|| Error::Schema(format!("unknown class name {s:?}")))
    }
}

/// Source-taxonomy id to schema id. Unlisted source ids map to void.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdRemap {
    table: BTreeMap<u8, u8>,
}

impl IdRemap {
    pub fn new(pairs: impl IntoIterator<Item = (u8, u8)>) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (src, dst) in pairs {
            if dst as usize > NUM_CLASSES {
                return Err(Error::Schema(format!(
                    "remap target {dst} for source id {src} is not a schema class"
                )));
            }
            table.insert(src, dst);
        }
        Ok(Self { table })
    }

    /// Reads `source_id,target_id` lines; a header line and `#` comments are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<_> = line.split(',').map(str::trim).collect();
            match (parts.first().map(|p| p.parse::<u8>()), parts.get(1).map(|p| p.parse::<u8>())) {
                (Some(Ok(a)), Some(Ok(b))) if parts.len() == 2 => pairs.push((a, b)),
                _ if n == 0 => continue,
                _ => return Err(Error::Schema(format!("bad remap line {}: {line:?}", n + 1))),
            }
        }
        Self::new(pairs)
    }

    pub fn apply(&self, id: u8) -> u8 {
        self.table.get(&id).copied().unwrap_or(VOID)
    }
}

/// Per-pixel class-id raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "segmentation buffer has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v as usize > NUM_CLASSES) {
            return Err(Error::Schema(format!(
                "unknown class id {} at pixel (row {}, col {})",
                data[i],
                i / width,
                i % width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, class: StreetClass) -> Self {
        Self::new(height, width, vec![class.id(); height * width]).expect("valid class")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Pixel count per id, index 0 being void.
    pub fn histogram(&self) -> [usize; NUM_CLASSES + 1] {
        let mut h = [0; NUM_CLASSES + 1];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }

    pub fn present_classes(&self) -> Vec<StreetClass> {
        let h = self.histogram();
        StreetClass::ALL.into_iter().filter(|c| h[c.id() as usize] > 0).collect()
    }

    /// Binary mask of one class and its pixel count.
    pub fn class_mask(&self, class: StreetClass) -> (Vec<u8>, usize) {
        let id = class.id();
        let mask: Vec<u8> = self.data.iter().map(|&v| u8::from(v == id)).collect();
        let count = mask.iter().map(|&m| m as usize).sum();
        (mask, count)
    }

    pub fn from_luma8(img: &image::GrayImage, remap: Option<&IdRemap>) -> Result<Self> {
        let (w, h) = img.dimensions();
        let data = match remap {
            Some(r) => img.as_raw().iter().map(|&v| r.apply(v)).collect(),
            None => img.as_raw().clone(),
        };
        Self::new(h as usize, w as usize, data)
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_luma8().save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Loads a class-id PNG and checks it against the companion image size.
pub fn load_segmentation(
    path: impl AsRef<Path>,
    expected_dims: Option<(usize, usize)>,
    remap: Option<&IdRemap>,
) -> Result<SegmentationMap> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let luma = match img {
        image::DynamicImage::ImageLuma8(l) => l,
        other => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("expected 8-bit single-channel PNG, got {:?}", other.color()),
            })
        }
    };
    let map = SegmentationMap::from_luma8(&luma, remap).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if let Some((h, w)) = expected_dims {
        if (map.height, map.width) != (h, w) {
            return Err(Error::Dimension(format!(
                "{}: segmentation is {}x{}, image is {h}x{w}",
                path.display(),
                map.height,
                map.width
            )));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard() -> SegmentationMap {
        let data = (0..16)
            .map(|i| if (i / 4 + i % 4) % 2 == 0 { 2 } else { 8 })
            .collect();
        SegmentationMap::new(4, 4, data).unwrap()
    }

    #[test]
    fn schema_is_stable() {
        assert_eq!(StreetClass::ALL.len(), 12);
        for (i, c) in StreetClass::ALL.iter().enumerate() {
            assert_eq!(c.id() as usize, i + 1);
            assert_eq!(StreetClass::from_id(c.id()), Some(*c));
            assert_eq!(c.name().parse::<StreetClass>().unwrap(), *c);
        }
        assert_eq!("traffic_sign".parse::<StreetClass>().unwrap(), StreetClass::TrafficSign);
        assert!(StreetClass::from_id(0).is_none() && StreetClass::from_id(13).is_none());
    }

    #[test]
    fn uniform_sky() {
        let m = SegmentationMap::filled(3, 5, StreetClass::Sky);
        assert_eq!(m.present_classes(), vec![StreetClass::Sky]);
        let (mask, n) = m.class_mask(StreetClass::Sky);
        assert_eq!(n, 15);
        assert!(mask.iter().all(|&v| v == 1));
        let (mask, n) = m.class_mask(StreetClass::Building);
        assert_eq!(n, 0);
        assert!(mask.iter().all(|&v| v == 0));
    }

    #[test]
    fn out_of_range_names_pixel() {
        let mut data = vec![9u8; 6];
        data[4] = 13;
        match SegmentationMap::new(2, 3, data) {
            Err(Error::Schema(m)) => assert!(m.contains("13") && m.contains("row 1, col 1"), "{m}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn checkerboard_counts() {
        let m = checkerboard();
        assert_eq!(m.present_classes(), vec![StreetClass::Building, StreetClass::Road]);
        let (mask, n) = m.class_mask(StreetClass::Building);
        assert_eq!(n, 8);
        assert_eq!(&mask[..4], &[1, 0, 1, 0]);
        assert_eq!(&mask[4..8], &[0, 1, 0, 1]);
        assert_eq!(m.class_mask(StreetClass::Road).1, 8);
    }

    #[test]
    fn png_load_checks_dims_and_remap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.png");
        checkerboard().save_png(&path).unwrap();
        assert_eq!(load_segmentation(&path, Some((4, 4)), None).unwrap(), checkerboard());
        assert!(matches!(
            load_segmentation(&path, Some((4, 5)), None),
            Err(Error::Dimension(_))
        ));
        let remap = IdRemap::from_csv("source,target\n2,12\n").unwrap();
        let m = load_segmentation(&path, None, Some(&remap)).unwrap();
        assert_eq!(m.histogram()[12], 8);
        assert_eq!(m.histogram()[0], 8);
    }

    #[test]
    fn remap_rejects_bad_target() {
        assert!(IdRemap::new([(1, 13)]).is_err());
        assert!(IdRemap::from_csv("1,2\nx,y\n").is_err());
    }
}
