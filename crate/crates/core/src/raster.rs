//! Raster and token-grid types shared by the whole pipeline, plus the two
//! resampling primitives (bilinear resize and min-max normalization).
//!
//! All buffers are row-major `f64`. Pixel `(y, x)` of an RGB image lives at
//! `(y * width + x) * 3 + c`; token `(r, c)` of a feature grid lives at
//! `(r * cols + c) * dim + d`.

use std::path::Path;

use crate::error::{Error, Result};

fn ensure_finite(data: &[f64], what: &str) -> Result<()> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "{what} contains non-finite value {} at index {i}",
            data[i]
        )));
    }
    Ok(())
}

/// An `H x W x 3` image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRaster {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageRaster {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::Dimension(format!(
                "image buffer has {} values, expected {height}x{width}x3 = {}",
                data.len(),
                height * width * Self::CHANNELS
            )));
        }
        ensure_finite(&data, "image")?;
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!(
                "image value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * Self::CHANNELS])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Checks that both sides divide `patch_size * 8`, which keeps every
    /// stage resolution of the four-stage backbone integral.
    pub fn check_stage_divisibility(&self, patch_size: usize) -> Result<()> {
        let unit = patch_size * 8;
        if unit == 0 || !self.height.is_multiple_of(unit) || !self.width.is_multiple_of(unit) {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible by patch_size*8 = {unit}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Multiplies every colour channel by a per-pixel mask in `[0, 1]`.
    pub fn masked(&self, mask: &[f64]) -> Result<Self> {
        if mask.len() != self.height * self.width {
            return Err(Error::Dimension(format!(
                "mask has {} values, image has {} pixels",
                mask.len(),
                self.height * self.width
            )));
        }
        let data = self
            .data
            .chunks_exact(3)
            .zip(mask)
            .flat_map(|(px, &m)| [px[0] * m, px[1] * m, px[2] * m])
            .collect();
        Self::new(self.height, self.width, data)
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        Self::new(h as usize, w as usize, data)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    /// Loads an 8-bit RGB PNG and scales values by `1/255`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_rgb8(&img.to_rgb8())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8().save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// A `rows x cols` grid of `dim`-channel tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * dim {
            return Err(Error::Dimension(format!(
                "feature grid buffer has {} values, expected {rows}x{cols}x{dim}",
                data.len()
            )));
        }
        ensure_finite(&data, "feature grid")?;
        Ok(Self {
            rows,
            cols,
            dim,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, dim: usize) -> Self {
        Self {
            rows,
            cols,
            dim,
            data: vec![0.0; rows * cols * dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn token(&self, r: usize, c: usize) -> &[f64] {
        let start = (r * self.cols + c) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Spatial `rows x cols` plane of a single channel.
    pub fn channel(&self, k: usize) -> Vec<f64> {
        assert!(k < self.dim, "channel {k} out of range (dim {})", self.dim);
        self.data.chunks_exact(self.dim).map(|t| t[k]).collect()
    }

    pub fn channel_l2_norm(&self, k: usize) -> f64 {
        self.data
            .chunks_exact(self.dim)
            .map(|t| t[k] * t[k])
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-pixel evidence map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ActivationMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "activation map buffer has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        ensure_finite(&data, "activation map")?;
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!(
                "activation value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn resize(&self, target_h: usize, target_w: usize) -> Result<Self> {
        let data = bilinear_resize(&self.data, self.height, self.width, target_h, target_w)?;
        Ok(Self {
            height: target_h,
            width: target_w,
            data,
        })
    }

    /// 8-bit grayscale rendering, `round(v * 255)`.
    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
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

// Source coordinate and blend weight for one output index under the
// half-pixel-center convention without corner alignment.
fn sample_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // a + (b - a) t is exact when a == b; the clamp absorbs rounding overshoot.
    let v = a + (b - a) * t;
    v.clamp(a.min(b), a.max(b))
}

/// Bilinear resampling of a row-major `height x width` plane.
///
/// Uses half-pixel centers and no corner alignment; coordinates falling
/// outside the source are clamped to the border. Every output value is a
/// convex combination of at most four source values.
pub fn bilinear_resize(
    src: &[f64],
    height: usize,
    width: usize,
    target_h: usize,
    target_w: usize,
) -> Result<Vec<f64>> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "cannot resize empty {height}x{width} map"
        )));
    }
    if target_h == 0 || target_w == 0 {
        return Err(Error::Dimension(format!(
            "resize target must be non-empty, got {target_h}x{target_w}"
        )));
    }
    if src.len() != height * width {
        return Err(Error::Dimension(format!(
            "map buffer has {} values, expected {height}x{width}",
            src.len()
        )));
    }
    let xs: Vec<_> = (0..target_w).map(|x| sample_axis(x, width, target_w)).collect();
    let mut out = Vec::with_capacity(target_h * target_w);
    for y in 0..target_h {
        let (y0, y1, ty) = sample_axis(y, height, target_h);
        let row0 = &src[y0 * width..(y0 + 1) * width];
        let row1 = &src[y1 * width..(y1 + 1) * width];
        for &(x0, x1, tx) in &xs {
            let top = lerp(row0[x0], row0[x1], tx);
            let bottom = lerp(row1[x0], row1[x1], tx);
            out.push(lerp(top, bottom, ty));
        }
    }
    Ok(out)
}

/// Rescales a finite map to `[0, 1]` via `(v - min) / (max - min)`.
///
/// A constant map carries no spatial evidence and normalizes to all zeros.
pub fn minmax_normalize(data: &[f64], height: usize, width: usize) -> Result<ActivationMap> {
    if data.len() != height * width {
        return Err(Error::Dimension(format!(
            "map buffer has {} values, expected {height}x{width}",
            data.len()
        )));
    }
    ensure_finite(data, "map")?;
    let (min, max) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = max - min;
    let out = if data.is_empty() || range == 0.0 {
        vec![0.0; data.len()]
    } else {
        data.iter()
            .map(|&v| ((v - min) / range).clamp(0.0, 1.0))
            .collect()
    };
    ActivationMap::new(height, width, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_map_resizes_to_constant() {
        let out = bilinear_resize(&[0.5; 6], 2, 3, 7, 5).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_pixel_broadcasts() {
        let out = bilinear_resize(&[0.3], 1, 1, 4, 4).unwrap();
        assert_eq!(out, vec![0.3; 16]);
    }

    #[test]
    fn half_pixel_center_column() {
        // Output x = 1 maps to source x = (1 + 0.5) * 2/3 - 0.5 = 0.5.
        let out = bilinear_resize(&[0.0, 1.0, 0.0, 1.0], 2, 2, 2, 3).unwrap();
        assert_eq!(out.len(), 6);
        assert!((out[1] - 0.5).abs() < 1e-15);
        assert!((out[4] - 0.5).abs() < 1e-15);
        // Edge columns: x = 0 -> src -1/6 clamped to 0; x = 2 -> 7/6 clamped to 1.
        assert_eq!(out[0], 0.0);
        assert_eq!(out[2], 1.0);
    }

    #[test]
    fn zero_target_is_dimension_error() {
        assert!(matches!(
            bilinear_resize(&[1.0], 1, 1, 0, 3),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            bilinear_resize(&[1.0], 1, 1, 3, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn minmax_examples() {
        let m = minmax_normalize(&[2.0, 4.0, 6.0], 1, 3).unwrap();
        assert_eq!(m.data(), &[0.0, 0.5, 1.0]);
        let m = minmax_normalize(&[0.7; 4], 2, 2).unwrap();
        assert_eq!(m.data(), &[0.0; 4]);
        let m = minmax_normalize(&[0.0, 1.0], 1, 2).unwrap();
        assert_eq!(m.data(), &[0.0, 1.0]);
    }

    #[test]
    fn constructors_reject_non_finite() {
        assert!(ImageRaster::new(1, 1, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(FeatureGrid::new(1, 1, 1, vec![f64::INFINITY]).is_err());
        assert!(ActivationMap::new(1, 1, vec![f64::NAN]).is_err());
        assert!(minmax_normalize(&[1.0, f64::NEG_INFINITY], 1, 2).is_err());
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(ImageRaster::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(ImageRaster::new(1, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn stage_divisibility() {
        let img = ImageRaster::filled(224, 224, 0.0).unwrap();
        assert!(img.check_stage_divisibility(4).is_ok());
        let img = ImageRaster::filled(56, 56, 0.0).unwrap();
        assert!(img.check_stage_divisibility(4).is_err());
    }

    #[test]
    fn png_roundtrip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = ImageRaster::new(1, 2, vec![0.0, 0.5, 1.0, 0.2, 0.4, 0.6]).unwrap();
        img.save_png(&path).unwrap();
        let back = ImageRaster::load_png(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let act = ActivationMap::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(act.to_luma8().as_raw(), &[0, 255]);
    }

    proptest! {
        #[test]
        fn resize_is_convex(
            (h, w, src) in (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
                (Just(h), Just(w), prop::collection::vec(-3.0f64..3.0, h * w))
            }),
            th in 1usize..12,
            tw in 1usize..12,
        ) {
            let out = bilinear_resize(&src, h, w, th, tw).unwrap();
            let lo = src.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(out.len(), th * tw);
            prop_assert!(out.iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn constant_resize_roundtrip(v in -5.0f64..5.0, h in 1usize..8, w in 1usize..8,
                                     th in 1usize..16, tw in 1usize..16) {
            let up = bilinear_resize(&vec![v; h * w], h, w, th, tw).unwrap();
            let back = bilinear_resize(&up, th, tw, h, w).unwrap();
            prop_assert!(back.iter().all(|&x| x == v));
        }

        #[test]
        fn normalize_idempotent(mut vals in prop::collection::vec(0.0f64..1.0, 2..32)) {
            vals[0] = 0.0;
            vals[1] = 1.0;
            let n = vals.len();
            let once = minmax_normalize(&vals, 1, n).unwrap();
            prop_assert_eq!(once.data(), &vals[..]);
            let twice = minmax_normalize(once.data(), 1, n).unwrap();
            prop_assert_eq!(twice.data(), once.data());
        }
    }
}
