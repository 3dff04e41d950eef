use serde::{Deserialize, Serialize};

use super::Crs;
use crate::error::{Error, Result};

/// Axis-aligned raster geometry.
///
/// `origin` is the outer upper-left corner; rows run southward. Pixel
/// `(row, col)` covers `x0 + col*dx .. x0 + (col+1)*dx` and
/// `y0 - (row+1)*dy .. y0 - row*dy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterGrid {
    pub origin: (f64, f64),
    pub pixel_size: (f64, f64),
    pub width: usize,
    pub height: usize,
    pub crs: Crs,
}

const GRID_EPS: f64 = 1e-9;

impl RasterGrid {
    pub fn new(origin: (f64, f64), pixel_size: (f64, f64), width: usize, height: usize, crs: Crs) -> Result<Self> {
        if !(pixel_size.0 > 0.0 && pixel_size.1 > 0.0) || !pixel_size.0.is_finite() || !pixel_size.1.is_finite() {
            return Err(Error::Metadata(format!("pixel size must be positive, got {pixel_size:?}")));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(Error::Metadata(format!("non-finite origin {origin:?}")));
        }
        Ok(Self { origin, pixel_size, width, height, crs })
    }

    /// Square-pixel WGS84 grid with `(lon, lat)` upper-left corner.
    pub fn geographic(lon: f64, lat: f64, pixel_deg: f64, width: usize, height: usize) -> Result<Self> {
        Self::new((lon, lat), (pixel_deg, pixel_deg), width, height, Crs::Wgs84)
    }

    /// `(rows, cols)`, the `ndarray` shape of planes on this grid.
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        self.pixel_to_world(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Continuous pixel coordinates (column, row measured from the outer corner) to CRS coordinates.
    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        (self.origin.0 + col * self.pixel_size.0, self.origin.1 - row * self.pixel_size.1)
    }

    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin.0) / self.pixel_size.0, (self.origin.1 - y) / self.pixel_size.1)
    }

    /// Equal up to a relative tolerance on the floating-point geometry.
    pub fn same_as(&self, other: &RasterGrid) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= GRID_EPS * a.abs().max(b.abs()).max(1.0);
        self.width == other.width
            && self.height == other.height
            && self.crs == other.crs
            && close(self.origin.0, other.origin.0)
            && close(self.origin.1, other.origin.1)
            && close(self.pixel_size.0, other.pixel_size.0)
            && close(self.pixel_size.1, other.pixel_size.1)
    }

    pub fn ensure_same(&self, other: &RasterGrid, what: &str) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what}: grid {other:?} does not match {self:?}")))
        }
    }

    pub(crate) fn check_shape(&self, dim: (usize, usize), what: &str) -> Result<()> {
        if dim != self.shape() {
            return Err(Error::Shape(format!("{what} has shape {dim:?}, grid is {:?}", self.shape())));
        }
        Ok(())
    }

    /// Grid covering the same extent with pixels `factor` times larger.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::Shape(format!("cannot coarsen {}x{} by {factor}", self.width, self.height)));
        }
        let f = factor as f64;
        Self::new(self.origin, (self.pixel_size.0 * f, self.pixel_size.1 * f), self.width / factor, self.height / factor, self.crs)
    }

    /// Sub-window starting at `(row, col)`.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::Shape(format!("window {height}x{width} at ({row},{col}) exceeds {}x{}", self.height, self.width)));
        }
        let origin = self.pixel_to_world(col as f64, row as f64);
        Self::new(origin, self.pixel_size, width, height, self.crs)
    }
}
