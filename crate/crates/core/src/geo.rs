//! GeoJSON export of per-image detections and factor rankings, and a
//! regular lat/lon grid aggregation of UPD rates.

use std::collections::BTreeMap;
use std::io::Write;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::ranking::FactorEntry;
use crate::segmentation::StreetClass;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRecord {
    pub image_id: String,
    pub lat: f64,
    pub lon: f64,
    pub upd: bool,
    pub p_upd: f64,
    /// Top-ranked factors, most contributing first.
    pub factors: Vec<FactorEntry>,
}

impl StudyRecord {
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::InvalidValue(format!(
                "{}: coordinates ({}, {}) out of range",
                self.image_id, self.lat, self.lon
            )));
        }
        if !(0.0..=1.0).contains(&self.p_upd) {
            return Err(Error::InvalidValue(format!(
                "{}: probability {} outside [0, 1]",
                self.image_id, self.p_upd
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeoJsonOutput {
    pub collection: Value,
    /// One diagnostic per rejected record.
    pub rejected: Vec<String>,
}

/// One `Point` feature per valid record, coordinates in `[lon, lat]` order,
/// input order preserved. Factor lists are cut to `top_k`.
pub fn emit_geojson(records: &[StudyRecord], top_k: usize) -> GeoJsonOutput {
    let mut features = Vec::with_capacity(records.len());
    let mut rejected = Vec::new();
    for r in records {
        if let Err(e) = r.validate() {
            rejected.push(e.to_string());
            continue;
        }
        let factors: Vec<&FactorEntry> = r.factors.iter().take(top_k).collect();
        features.push(json!({
            "type": "Feature",
            "id": r.image_id,
            "geometry": { "type": "Point", "coordinates": [r.lon, r.lat] },
            "properties": {
                "image_id": r.image_id,
                "upd": r.upd,
                "p_upd": r.p_upd,
                "factors": factors.iter().map(|f| f.class.name()).collect::<Vec<_>>(),
                "class_ids": factors.iter().map(|f| f.class.id()).collect::<Vec<_>>(),
                "densities": factors.iter().map(|f| f.density).collect::<Vec<_>>(),
                "pixel_counts": factors.iter().map(|f| f.pixel_count).collect::<Vec<_>>(),
            }
        }));
    }
    GeoJsonOutput {
        collection: json!({ "type": "FeatureCollection", "features": features }),
        rejected,
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::Schema(format!("feature is missing {key:?}")))
}

fn array<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Vec<Value>> {
    field(obj, key)?
        .as_array()
        .ok_or_else(|| Error::Schema(format!("{key:?} is not an array")))
}

fn number(v: &Value, what: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::Schema(format!("{what} is not a number")))
}

/// Inverse of [`emit_geojson`].
pub fn parse_geojson(text: &str) -> Result<Vec<StudyRecord>> {
    let root: Value = serde_json::from_str(text)?;
    let root = root
        .as_object()
        .filter(|o| o.get("type") == Some(&json!("FeatureCollection")))
        .ok_or_else(|| Error::Schema("not a FeatureCollection".into()))?;
    let mut out = Vec::new();
    for f in array(root, "features")? {
        let f = f.as_object().ok_or_else(|| Error::Schema("feature is not an object".into()))?;
        let geom = field(f, "geometry")?
            .as_object()
            .ok_or_else(|| Error::Schema("geometry is not an object".into()))?;
        let coords = array(geom, "coordinates")?;
        if coords.len() != 2 {
            return Err(Error::Schema("point needs two coordinates".into()));
        }
        let props = field(f, "properties")?
            .as_object()
            .ok_or_else(|| Error::Schema("properties is not an object".into()))?;
        let ids = array(props, "class_ids")?;
        let dens = array(props, "densities")?;
        let counts = array(props, "pixel_counts")?;
        if ids.len() != dens.len() || ids.len() != counts.len() {
            return Err(Error::Schema("factor arrays differ in length".into()));
        }
        let factors = ids
            .iter()
            .zip(dens)
            .zip(counts)
            .map(|((id, d), n)| {
                let id = id.as_u64().ok_or_else(|| Error::Schema("bad class id".into()))?;
                Ok(FactorEntry {
                    class: StreetClass::from_id(id as u8)
                        .ok_or_else(|| Error::Schema(format!("unknown class id {id}")))?,
                    density: number(d, "density")?,
                    pixel_count: n.as_u64().ok_or_else(|| Error::Schema("bad pixel count".into()))? as usize,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rec = StudyRecord {
            image_id: field(props, "image_id")?
                .as_str()
                .ok_or_else(|| Error::Schema("image_id is not a string".into()))?
                .to_string(),
            lon: number(&coords[0], "longitude")?,
            lat: number(&coords[1], "latitude")?,
            upd: field(props, "upd")?
                .as_bool()
                .ok_or_else(|| Error::Schema("upd is not a boolean".into()))?,
            p_upd: number(field(props, "p_upd")?, "p_upd")?,
            factors,
        };
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellStat {
    /// `floor(lat / cell_size)` and `floor(lon / cell_size)`.
    pub row: i64,
    pub col: i64,
    pub cell_lat: f64,
    pub cell_lon: f64,
    pub count: usize,
    pub upd_count: usize,
    pub upd_rate: f64,
}

/// Per-cell record counts and UPD fractions; empty cells are absent.
pub fn grid_aggregate(records: &[StudyRecord], cell_size: f64) -> Result<Vec<CellStat>> {
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(Error::InvalidValue(format!("cell size must be positive, got {cell_size}")));
    }
    let mut cells: BTreeMap<(i64, i64), (usize, usize)> = BTreeMap::new();
    for r in records {
        let key = ((r.lat / cell_size).floor() as i64, (r.lon / cell_size).floor() as i64);
        let e = cells.entry(key).or_default();
        e.0 += 1;
        e.1 += usize::from(r.upd);
    }
    Ok(cells
        .into_iter()
        .map(|((row, col), (count, upd_count))| CellStat {
            row,
            col,
            cell_lat: row as f64 * cell_size,
            cell_lon: col as f64 * cell_size,
            count,
            upd_count,
            upd_rate: upd_count as f64 / count as f64,
        })
        .collect())
}

pub fn write_cells_csv<W: Write>(out: W, cells: &[CellStat]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["cell_lat", "cell_lon", "count", "upd_rate"])?;
    for c in cells {
        wtr.write_record([
            c.cell_lat.to_string(),
            c.cell_lon.to_string(),
            c.count.to_string(),
            c.upd_rate.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<cells csv>", e))?;
    Ok(())
}
