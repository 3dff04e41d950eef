//! Georeferenced raster containers.
//!
//! Values and validity are always carried side by side: a pixel is nodata
//! because its validity flag is false, never because of a sentinel value.

mod crs;
pub mod geotiff;
mod grid;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use crs::Crs;
pub use grid::RasterGrid;

/// Single-band raster with an explicit validity plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub grid: RasterGrid,
    pub values: Array2<T>,
    pub valid: Array2<bool>,
}

impl<T: Scalar> Raster<T> {
    /// Builds a raster whose pixels are valid wherever the value is finite.
    pub fn new(grid: RasterGrid, values: Array2<T>) -> Result<Self> {
        grid.check_shape(values.dim(), "raster values")?;
        let valid = values.mapv(|v| v.is_finite());
        Ok(Self { grid, values, valid })
    }

    pub fn with_validity(grid: RasterGrid, values: Array2<T>, valid: Array2<bool>) -> Result<Self> {
        grid.check_shape(values.dim(), "raster values")?;
        grid.check_shape(valid.dim(), "raster validity")?;
        Ok(Self { grid, values, valid })
    }

    pub fn mask(&self) -> MaskRaster {
        MaskRaster { grid: self.grid.clone(), valid: self.valid.clone() }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Boolean validity raster; `true` marks a pixel usable for training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRaster {
    pub grid: RasterGrid,
    pub valid: Array2<bool>,
}

impl MaskRaster {
    pub fn new(grid: RasterGrid, valid: Array2<bool>) -> Result<Self> {
        grid.check_shape(valid.dim(), "mask")?;
        Ok(Self { grid, valid })
    }

    pub fn all_valid(grid: &RasterGrid) -> Self {
        Self { grid: grid.clone(), valid: Array2::from_elem(grid.shape(), true) }
    }

    pub fn all_invalid(grid: &RasterGrid) -> Self {
        Self { grid: grid.clone(), valid: Array2::from_elem(grid.shape(), false) }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band<T> {
    pub id: String,
    pub values: Array2<T>,
}

/// Co-registered multi-band image: the predictor input of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack<T> {
    pub grid: RasterGrid,
    pub bands: Vec<Band<T>>,
    /// Pixel validity shared by every band (footprint, cloud cover).
    pub valid: Array2<bool>,
    pub acquired: Option<NaiveDate>,
}

impl<T: Scalar> BandStack<T> {
    pub fn new(grid: RasterGrid, bands: Vec<Band<T>>, acquired: Option<NaiveDate>) -> Result<Self> {
        let valid = Array2::from_elem(grid.shape(), true);
        Self::with_validity(grid, bands, valid, acquired)
    }

    pub fn with_validity(grid: RasterGrid, bands: Vec<Band<T>>, valid: Array2<bool>, acquired: Option<NaiveDate>) -> Result<Self> {
        grid.check_shape(valid.dim(), "stack validity")?;
        for b in &bands {
            grid.check_shape(b.values.dim(), &format!("band `{}`", b.id))?;
        }
        Ok(Self { grid, bands, valid, acquired })
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn band_ids(&self) -> Vec<String> {
        self.bands.iter().map(|b| b.id.clone()).collect()
    }

    pub fn band(&self, id: &str) -> Option<&Band<T>> {
        self.bands.iter().find(|b| b.id == id)
    }

    pub fn mask(&self) -> MaskRaster {
        MaskRaster { grid: self.grid.clone(), valid: self.valid.clone() }
    }

    /// Removes and returns the named band, if present.
    pub fn take_band(&mut self, id: &str) -> Option<Band<T>> {
        let pos = self.bands.iter().position(|b| b.id == id)?;
        Some(self.bands.remove(pos))
    }
}

/// Per-pixel (lower, median, upper) quantile maps, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTriple<T> {
    pub lower: Array2<T>,
    pub median: Array2<T>,
    pub upper: Array2<T>,
}

impl<T: Scalar> QuantileTriple<T> {
    pub fn new(lower: Array2<T>, median: Array2<T>, upper: Array2<T>) -> Result<Self> {
        if lower.dim() != median.dim() || lower.dim() != upper.dim() {
            return Err(Error::Shape(format!(
                "quantile maps disagree: lower {:?}, median {:?}, upper {:?}",
                lower.dim(),
                median.dim(),
                upper.dim()
            )));
        }
        Ok(Self { lower, median, upper })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.median.dim()
    }

    pub fn heads(&self) -> [&Array2<T>; 3] {
        [&self.lower, &self.median, &self.upper]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { lower: self.lower.mapv(&f), median: self.median.mapv(&f), upper: self.upper.mapv(&f) }
    }
}
