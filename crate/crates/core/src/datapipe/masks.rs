use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{MaskRaster, Raster};
use crate::scalar::Scalar;

/// Landsat Collection 2 `QA_PIXEL` bits.
pub mod qa_bits {
    pub const FILL: u16 = 1 << 0;
    pub const CIRRUS: u16 = 1 << 2;
    pub const CLOUD: u16 = 1 << 3;
    pub const CLEAR: u16 = 1 << 6;
    pub const CLOUD_CONFIDENCE_SHIFT: u16 = 8;
    pub const CIRRUS_CONFIDENCE_SHIFT: u16 = 14;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    None = 0,
    Low = 1,
    Medium = 2,
    High = 3,
}

impl Confidence {
    fn from_bits(b: u16) -> Self {
        match b & 0b11 {
            0 => Confidence::None,
            1 => Confidence::Low,
            2 => Confidence::Medium,
            _ => Confidence::High,
        }
    }
}

/// Cloud information attached to a scene.
#[derive(Debug, Clone, Default)]
pub struct QaMetadata {
    /// Per-pixel quality bitmask, preferred when present.
    pub qa_pixel: Option<Array2<u16>>,
    /// Scene-level cloud cover in percent.
    pub cloud_cover: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudMaskConfig {
    /// Pixels whose cloud or cirrus confidence reaches this level are invalid.
    pub min_confidence: Confidence,
    /// Scenes above this cloud cover percentage are discarded when no bitmask exists.
    pub scene_threshold: f64,
}

impl Default for CloudMaskConfig {
    fn default() -> Self {
        Self { min_confidence: Confidence::Medium, scene_threshold: 80.0 }
    }
}

fn qa_clear(q: u16, min: Confidence) -> bool {
    use qa_bits::*;
    if q & (FILL | CIRRUS | CLOUD) != 0 {
        return false;
    }
    let cloud = Confidence::from_bits(q >> CLOUD_CONFIDENCE_SHIFT);
    let cirrus = Confidence::from_bits(q >> CIRRUS_CONFIDENCE_SHIFT);
    cloud < min && cirrus < min
}

pub fn cloud_mask(grid: &crate::raster::RasterGrid, qa: &QaMetadata, cfg: &CloudMaskConfig) -> Result<MaskRaster> {
    if let Some(bits) = &qa.qa_pixel {
        return MaskRaster::new(grid.clone(), bits.mapv(|q| qa_clear(q, cfg.min_confidence)));
    }
    match qa.cloud_cover {
        Some(cover) if cover.is_finite() => {
            Ok(if cover > cfg.scene_threshold { MaskRaster::all_invalid(grid) } else { MaskRaster::all_valid(grid) })
        }
        Some(cover) => Err(Error::Metadata(format!("cloud cover {cover} is not a number"))),
        None => Err(Error::Metadata("scene carries neither a quality band nor a cloud cover value".into())),
    }
}

/// Pooled outlier thresholds: values strictly outside `[lower, upper]` are outliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierCut {
    pub lower: f64,
    pub upper: f64,
}

impl OutlierCut {
    /// Ranks out the `floor(fraction * n)` smallest and largest valid values of all rasters together.
    pub fn fit<T: Scalar>(targets: &[&Raster<T>], fraction: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&fraction) {
            return Err(Error::Domain(format!("outlier fraction must be in [0, 0.5), got {fraction}")));
        }
        let mut pooled: Vec<f64> =
            targets.iter().flat_map(|t| t.values.iter().zip(t.valid.iter()).filter(|(_, ok)| **ok).map(|(v, _)| v.as_f64())).collect();
        if pooled.is_empty() {
            return Err(Error::EmptySample("no valid ground-truth values for the outlier cut".into()));
        }
        pooled.sort_by(f64::total_cmp);
        let n = pooled.len();
        let k = ((fraction * n as f64) + 1e-9).floor() as usize;
        Ok(Self { lower: pooled[k], upper: pooled[n - 1 - k] })
    }

    /// `true` where the value is kept; invalid pixels are left to other masks.
    pub fn mask<T: Scalar>(&self, target: &Raster<T>) -> MaskRaster {
        let valid = Zip::from(&target.values)
            .and(&target.valid)
            .map_collect(|v, &ok| !ok || (v.as_f64() >= self.lower && v.as_f64() <= self.upper));
        MaskRaster { grid: target.grid.clone(), valid }
    }
}

/// Masks the top and bottom `fraction` of the pooled target distribution.
pub fn outlier_mask<T: Scalar>(targets: &[&Raster<T>], fraction: f64) -> Result<Vec<MaskRaster>> {
    let cut = OutlierCut::fit(targets, fraction)?;
    Ok(targets.iter().map(|t| cut.mask(t)).collect())
}

/// Logical AND of masks on a shared grid.
pub fn combine_masks(masks: &[&MaskRaster]) -> Result<MaskRaster> {
    let (first, rest) = masks.split_first().ok_or_else(|| Error::Domain("no masks to combine".into()))?;
    let mut out = (*first).clone();
    for m in rest {
        first.grid.ensure_same(&m.grid, "mask")?;
        out.valid.zip_mut_with(&m.valid, |a, &b| *a &= b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RasterGrid;

    fn grid(w: usize, h: usize) -> RasterGrid {
        RasterGrid::geographic(0.0, 1.0, 0.01, w, h).unwrap()
    }

    #[test]
    fn qa_pixel_rules() {
        let g = grid(4, 1);
        // Typical Landsat values: clear land, high-confidence cirrus, cloud, fill.
        let bits = ndarray::array![[21824u16, 55052, 22280, 1]];
        let m = cloud_mask(&g, &QaMetadata { qa_pixel: Some(bits), cloud_cover: Some(99.0) }, &CloudMaskConfig::default()).unwrap();
        assert_eq!(m.valid.row(0).to_vec(), vec![true, false, false, false]);
        let clear = Array2::from_elem((1, 4), 21824u16);
        let m = cloud_mask(&g, &QaMetadata { qa_pixel: Some(clear), cloud_cover: None }, &CloudMaskConfig::default()).unwrap();
        assert_eq!(m.valid_count(), 4);
        let cirrus = Array2::from_elem((1, 4), qa_bits::CIRRUS | (3 << qa_bits::CIRRUS_CONFIDENCE_SHIFT));
        let m = cloud_mask(&g, &QaMetadata { qa_pixel: Some(cirrus), cloud_cover: None }, &CloudMaskConfig::default()).unwrap();
        assert_eq!(m.valid_count(), 0);
    }

    #[test]
    fn scene_level_threshold() {
        let g = grid(2, 2);
        let cfg = CloudMaskConfig::default();
        let at = |c| cloud_mask(&g, &QaMetadata { qa_pixel: None, cloud_cover: Some(c) }, &cfg).unwrap().valid_count();
        assert_eq!(at(90.0), 0);
        assert_eq!(at(80.0), 4);
        assert!(matches!(cloud_mask(&g, &QaMetadata::default(), &cfg), Err(Error::Metadata(_))));
    }

    #[test]
    fn outlier_examples() {
        let g = grid(100, 1);
        let r = Raster::new(g.clone(), Array2::from_shape_fn((1, 100), |(_, c)| (c + 1) as f64)).unwrap();
        let m = &outlier_mask(&[&r], 0.01).unwrap()[0];
        let masked: Vec<usize> = (0..100).filter(|&c| !m.valid[(0, c)]).map(|c| c + 1).collect();
        assert_eq!(masked, vec![1, 100]);
        assert_eq!(outlier_mask(&[&r], 0.0).unwrap()[0].valid_count(), 100);
        let flat = Raster::new(g, Array2::from_elem((1, 100), 3.0)).unwrap();
        assert_eq!(outlier_mask(&[&flat], 0.2).unwrap()[0].valid_count(), 100);
        assert!(matches!(outlier_mask(&[&r], 0.5), Err(Error::Domain(_))));
        let empty = Raster::new(grid(1, 1), ndarray::array![[f64::NAN]]).unwrap();
        assert!(matches!(outlier_mask(&[&empty], 0.01), Err(Error::EmptySample(_))));
    }

    #[test]
    fn outlier_cut_is_pooled() {
        let a = Raster::new(grid(50, 1), Array2::from_shape_fn((1, 50), |(_, c)| (c + 1) as f64)).unwrap();
        let b = Raster::new(grid(50, 1), Array2::from_shape_fn((1, 50), |(_, c)| (c + 51) as f64)).unwrap();
        let m = outlier_mask(&[&a, &b], 0.01).unwrap();
        assert!(!m[0].valid[(0, 0)] && m[0].valid[(0, 49)]);
        assert!(m[1].valid[(0, 0)] && !m[1].valid[(0, 49)]);
    }

    #[test]
    fn combine_examples() {
        let g = grid(3, 2);
        let t = MaskRaster::all_valid(&g);
        let f = MaskRaster::all_invalid(&g);
        assert_eq!(combine_masks(&[&t, &t]).unwrap(), t);
        assert_eq!(combine_masks(&[&t, &f]).unwrap(), f);
        assert_eq!(combine_masks(&[&t]).unwrap(), t);
        assert!(matches!(combine_masks(&[&t, &MaskRaster::all_valid(&grid(2, 2))]), Err(Error::Shape(_))));
    }
}
