//! Resampling between raster grids.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::raster::{Band, BandStack, Raster, RasterGrid};
use crate::scalar::Scalar;

/// A target pixel is kept only if valid source data covers at least this share of it.
const MIN_COVERAGE: f64 = 0.5;
/// Cap on the per-axis supersampling factor used across CRS boundaries.
const MAX_SUPERSAMPLE: usize = 48;

/// Source contributions for one target pixel: `(flat source index, weight)`.
type Stencil = Vec<(usize, f64)>;

/// Resamples a single raster onto `target`.
///
/// Within one CRS, coarser targets use exact area-weighted averaging and finer
/// (or equal) targets use bilinear interpolation. Across CRSs each target
/// pixel is supersampled and averaged. Pixels not covered by valid source
/// data are flagged invalid.
pub fn regrid<T: Scalar>(raster: &Raster<T>, target: &RasterGrid) -> Result<Raster<T>> {
    let (mut planes, valid) = resample(&[raster.values.view()], raster.valid.view(), &raster.grid, target)?;
    Raster::with_validity(target.clone(), planes.pop().expect("one plane"), valid)
}

/// Resamples every band of a stack with a shared set of weights.
pub fn regrid_stack<T: Scalar>(stack: &BandStack<T>, target: &RasterGrid) -> Result<BandStack<T>> {
    let views: Vec<_> = stack.bands.iter().map(|b| b.values.view()).collect();
    let (planes, valid) = resample(&views, stack.valid.view(), &stack.grid, target)?;
    let bands = stack.bands.iter().zip(planes).map(|(b, values)| Band { id: b.id.clone(), values }).collect();
    BandStack::with_validity(target.clone(), bands, valid, stack.acquired)
}

fn resample<T: Scalar>(
    planes: &[ArrayView2<T>],
    valid: ArrayView2<bool>,
    src: &RasterGrid,
    dst: &RasterGrid,
) -> Result<(Vec<Array2<T>>, Array2<bool>)> {
    if src.is_empty() {
        return Err(Error::Metadata("source raster has an empty grid".into()));
    }
    if src.same_as(dst) {
        return Ok((planes.iter().map(|p| p.to_owned()).collect(), valid.to_owned()));
    }
    let stencil: Box<dyn Fn(usize, usize) -> Stencil> = if src.crs != dst.crs {
        Box::new(|r, c| reprojected(src, dst, r, c))
    } else if dst.pixel_size.0 >= src.pixel_size.0 && dst.pixel_size.1 >= src.pixel_size.1 {
        Box::new(|r, c| area_weights(src, dst, r, c))
    } else {
        Box::new(|r, c| bilinear(src, dst, r, c))
    };

    let flat_valid: Vec<bool> = valid.iter().copied().collect();
    let flat: Vec<Vec<T>> = planes.iter().map(|p| p.iter().copied().collect()).collect();
    let (h, w) = dst.shape();
    let mut out: Vec<Array2<T>> = planes.iter().map(|_| Array2::zeros((h, w))).collect();
    let mut out_valid = Array2::from_elem((h, w), false);
    let mut acc = vec![0.0f64; planes.len()];
    for r in 0..h {
        for c in 0..w {
            let weights = stencil(r, c);
            acc.fill(0.0);
            let mut kept = 0.0;
            for &(i, wt) in &weights {
                if flat_valid[i] {
                    kept += wt;
                    for (a, p) in acc.iter_mut().zip(&flat) {
                        *a += wt * p[i].as_f64();
                    }
                }
            }
            // Weights of a fully covered pixel sum to one.
            if kept > 0.0 && kept >= MIN_COVERAGE {
                out_valid[(r, c)] = true;
                for (o, a) in out.iter_mut().zip(&acc) {
                    o[(r, c)] = T::lit(a / kept);
                }
            }
        }
    }
    Ok((out, out_valid))
}

/// Exact overlap areas, as fractions of the target pixel.
fn area_weights(src: &RasterGrid, dst: &RasterGrid, r: usize, c: usize) -> Stencil {
    let (x0, y0) = dst.pixel_to_world(c as f64, r as f64);
    let (x1, y1) = dst.pixel_to_world(c as f64 + 1.0, r as f64 + 1.0);
    let (c0, r0) = src.world_to_pixel(x0, y0);
    let (c1, r1) = src.world_to_pixel(x1, y1);
    let area = (c1 - c0) * (r1 - r0);
    let mut out = Vec::new();
    let rows = span(r0, r1, src.height);
    let cols = span(c0, c1, src.width);
    for sr in rows.clone() {
        let dy = overlap(r0, r1, sr as f64);
        for sc in cols.clone() {
            let wt = dy * overlap(c0, c1, sc as f64) / area;
            if wt > 0.0 {
                out.push((sr * src.width + sc, wt));
            }
        }
    }
    out
}

fn span(a: f64, b: f64, n: usize) -> std::ops::Range<usize> {
    let lo = a.floor().max(0.0) as usize;
    let hi = (b.ceil().max(0.0) as usize).min(n);
    lo.min(hi)..hi
}

/// Length of `[a, b] ∩ [i, i + 1]`.
fn overlap(a: f64, b: f64, i: f64) -> f64 {
    (b.min(i + 1.0) - a.max(i)).max(0.0)
}

/// Bilinear weights at the target pixel centre; empty outside the source footprint.
fn bilinear(src: &RasterGrid, dst: &RasterGrid, r: usize, c: usize) -> Stencil {
    let (x, y) = dst.pixel_center(r, c);
    let (u, v) = src.world_to_pixel(x, y);
    if u < 0.0 || v < 0.0 || u > src.width as f64 || v > src.height as f64 {
        return Vec::new();
    }
    // Centre-based coordinates, clamped so edge half-pixels replicate the border.
    let cu = (u - 0.5).clamp(0.0, (src.width - 1) as f64);
    let cv = (v - 0.5).clamp(0.0, (src.height - 1) as f64);
    let (i0, j0) = (cv.floor() as usize, cu.floor() as usize);
    let (i1, j1) = ((i0 + 1).min(src.height - 1), (j0 + 1).min(src.width - 1));
    let (fy, fx) = (cv - i0 as f64, cu - j0 as f64);
    let mut out = Vec::with_capacity(4);
    for (i, wy) in [(i0, 1.0 - fy), (i1, fy)] {
        for (j, wx) in [(j0, 1.0 - fx), (j1, fx)] {
            let wt = wy * wx;
            if wt > 0.0 {
                out.push((i * src.width + j, wt));
            }
        }
    }
    merge(out)
}

fn merge(mut s: Stencil) -> Stencil {
    s.sort_by_key(|(i, _)| *i);
    s.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    s
}

/// Supersampled nearest-neighbour average for grids in different CRSs.
fn reprojected(src: &RasterGrid, dst: &RasterGrid, r: usize, c: usize) -> Stencil {
    let to_src = |col: f64, row: f64| -> Option<(f64, f64)> {
        let (x, y) = dst.pixel_to_world(col, row);
        let (lon, lat) = dst.crs.to_lonlat(x, y)?;
        let (sx, sy) = src.crs.from_lonlat(lon, lat);
        Some(src.world_to_pixel(sx, sy))
    };
    // Enough samples per axis to hit roughly every source pixel under the target pixel.
    let (Some(a), Some(b), Some(d)) = (to_src(c as f64, r as f64), to_src(c as f64 + 1.0, r as f64), to_src(c as f64, r as f64 + 1.0))
    else {
        return Vec::new();
    };
    let n_u = ((b.0 - a.0).hypot(b.1 - a.1).ceil() as usize).clamp(2, MAX_SUPERSAMPLE);
    let n_v = ((d.0 - a.0).hypot(d.1 - a.1).ceil() as usize).clamp(2, MAX_SUPERSAMPLE);
    let wt = 1.0 / (n_u * n_v) as f64;
    let mut out = Vec::with_capacity(n_u * n_v);
    for i in 0..n_v {
        for j in 0..n_u {
            let col = c as f64 + (j as f64 + 0.5) / n_u as f64;
            let row = r as f64 + (i as f64 + 0.5) / n_v as f64;
            if let Some((u, v)) = to_src(col, row) {
                if u >= 0.0 && v >= 0.0 && u < src.width as f64 && v < src.height as f64 {
                    out.push((v as usize * src.width + u as usize, wt));
                }
            }
        }
    }
    merge(out)
}
