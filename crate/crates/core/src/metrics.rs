//! Evaluation quantities over masked rasters: point error, interval coverage
//! and widths, bound exceedance, crossing rate and empirical quantiles.
//!
//! Interval membership uses the closed interval `[lower, upper]`. A crossed
//! interval (`upper < lower`) never covers. Pooled reports treat every valid
//! pixel of every image as one sample.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::QuantileTriple;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub masked_mae: f64,
    pub interval_coverage: f64,
    pub median_interval_width: f64,
    pub frac_above_lower: f64,
    pub frac_below_upper: f64,
    pub crossing_rate: f64,
    pub valid_pixel_count: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: [&'static str; 7] = [
        "masked_mae",
        "interval_coverage",
        "median_interval_width",
        "frac_above_lower",
        "frac_below_upper",
        "crossing_rate",
        "valid_pixel_count",
    ];

    pub fn csv_record(&self) -> [String; 7] {
        [
            self.masked_mae.to_string(),
            self.interval_coverage.to_string(),
            self.median_interval_width.to_string(),
            self.frac_above_lower.to_string(),
            self.frac_below_upper.to_string(),
            self.crossing_rate.to_string(),
            self.valid_pixel_count.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub coverage: f64,
    pub median_width: f64,
    pub frac_above_lower: f64,
    pub frac_below_upper: f64,
    pub crossing_rate: f64,
}

fn aligned(a: (usize, usize), b: (usize, usize), mask: (usize, usize)) -> Result<()> {
    if a != b || a != mask {
        return Err(Error::Shape(format!("rasters {a:?}, {b:?} and mask {mask:?} must share one grid")));
    }
    Ok(())
}

/// Mean absolute error over valid pixels.
pub fn masked_mae<T: Scalar>(pred: ArrayView2<T>, target: ArrayView2<T>, mask: ArrayView2<bool>) -> Result<f64> {
    aligned(pred.dim(), target.dim(), mask.dim())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, y), ok) in pred.iter().zip(target.iter()).zip(mask.iter()) {
        if *ok {
            sum += (*p - *y).abs().as_f64();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptySample("MAE over an empty mask".into()));
    }
    Ok(sum / n as f64)
}

pub fn interval_metrics<T: Scalar>(triple: &QuantileTriple<T>, target: ArrayView2<T>, mask: ArrayView2<bool>) -> Result<IntervalMetrics> {
    let mut acc = MetricsAccumulator::default();
    acc.add(triple, target, mask)?;
    if acc.count == 0 {
        return Err(Error::EmptySample("interval metrics over an empty mask".into()));
    }
    Ok(acc.intervals())
}

/// Full report for one image.
pub fn evaluate<T: Scalar>(triple: &QuantileTriple<T>, target: ArrayView2<T>, mask: ArrayView2<bool>) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::default();
    acc.add(triple, target, mask)?;
    acc.report()
}

/// Pools pixels from any number of images into one report.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    abs_error: f64,
    count: usize,
    covered: usize,
    above_lower: usize,
    below_upper: usize,
    crossed: usize,
    widths: Vec<f64>,
}

impl MetricsAccumulator {
    pub fn add<T: Scalar>(&mut self, triple: &QuantileTriple<T>, target: ArrayView2<T>, mask: ArrayView2<bool>) -> Result<()> {
        aligned(triple.dim(), target.dim(), mask.dim())?;
        let rows = triple.lower.iter().zip(triple.median.iter()).zip(triple.upper.iter()).zip(target.iter()).zip(mask.iter());
        for ((((lo, med), up), y), ok) in rows {
            if !*ok {
                continue;
            }
            let (lo, med, up, y) = (lo.as_f64(), med.as_f64(), up.as_f64(), y.as_f64());
            self.count += 1;
            self.abs_error += (med - y).abs();
            let above = y >= lo;
            let below = y <= up;
            self.above_lower += usize::from(above);
            self.below_upper += usize::from(below);
            self.covered += usize::from(above && below);
            self.crossed += usize::from(up < lo);
            self.widths.push(up - lo);
        }
        Ok(())
    }

    pub fn valid_pixel_count(&self) -> usize {
        self.count
    }

    fn intervals(&self) -> IntervalMetrics {
        let n = self.count as f64;
        IntervalMetrics {
            coverage: self.covered as f64 / n,
            median_width: median(&self.widths),
            frac_above_lower: self.above_lower as f64 / n,
            frac_below_upper: self.below_upper as f64 / n,
            crossing_rate: self.crossed as f64 / n,
        }
    }

    pub fn report(&self) -> Result<MetricsReport> {
        if self.count == 0 {
            return Err(Error::EmptySample("metrics over an empty mask".into()));
        }
        let iv = self.intervals();
        Ok(MetricsReport {
            masked_mae: self.abs_error / self.count as f64,
            interval_coverage: iv.coverage,
            median_interval_width: iv.median_width,
            frac_above_lower: iv.frac_above_lower,
            frac_below_upper: iv.frac_below_upper,
            crossing_rate: iv.crossing_rate,
            valid_pixel_count: self.count,
        })
    }
}

/// Conventional median (mean of the two central order statistics for even counts).
fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest-rank empirical quantile of an ascending slice: element `ceil(q n) - 1`.
pub fn nearest_rank<T: Copy>(sorted: &[T], q: f64) -> T {
    let n = sorted.len();
    let rank = (q * n as f64 - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Nearest-rank q-quantile of the valid pixel values.
pub fn prediction_quantile<T: Scalar>(raster: ArrayView2<T>, mask: ArrayView2<bool>, q: f64) -> Result<T> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
    }
    if raster.dim() != mask.dim() {
        return Err(Error::Shape(format!("raster {:?} vs mask {:?}", raster.dim(), mask.dim())));
    }
    let mut values: Vec<T> = raster.iter().zip(mask.iter()).filter(|(_, ok)| **ok).map(|(v, _)| *v).collect();
    if values.is_empty() {
        return Err(Error::EmptySample("quantile of an empty mask".into()));
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(nearest_rank(&values, q))
}

/// Integer region labels with optional display names.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionLabels {
    pub labels: Array2<u32>,
    pub names: BTreeMap<u32, String>,
}

impl RegionLabels {
    pub const UNLABELED: &'static str = "unlabeled";

    fn name(&self, label: u32) -> String {
        match self.names.get(&label) {
            Some(n) => n.clone(),
            None if label == 0 => Self::UNLABELED.to_string(),
            None => format!("region-{label}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub row: usize,
    pub col: usize,
    pub value_a: f64,
    pub value_b: f64,
    pub region: String,
}

/// Per-valid-pixel pairs of two co-registered maps, tagged with their region.
pub fn paired_scatter<T: Scalar>(
    map_a: ArrayView2<T>,
    map_b: ArrayView2<T>,
    regions: Option<&RegionLabels>,
    mask: ArrayView2<bool>,
) -> Result<Vec<ScatterRow>> {
    aligned(map_a.dim(), map_b.dim(), mask.dim())?;
    if let Some(r) = regions {
        if r.labels.dim() != map_a.dim() {
            return Err(Error::Shape(format!("region labels {:?} vs maps {:?}", r.labels.dim(), map_a.dim())));
        }
    }
    let mut rows = Vec::new();
    for ((row, col), ok) in mask.indexed_iter() {
        if !*ok {
            continue;
        }
        let region = match regions {
            Some(r) => r.name(r.labels[[row, col]]),
            None => RegionLabels::UNLABELED.to_string(),
        };
        rows.push(ScatterRow { row, col, value_a: map_a[[row, col]].as_f64(), value_b: map_b[[row, col]].as_f64(), region });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityBin {
    pub lo: f64,
    pub hi: f64,
    pub density: f64,
}

/// Histogram density estimate on `bins` equal bins over `[lo, hi]`; integrates to 1
/// over the values that fall inside the range.
pub fn density_histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Vec<DensityBin>> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::Domain(format!("invalid histogram range [{lo}, {hi}] with {bins} bins")));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut inside = 0usize;
    for &v in values {
        if v.is_finite() && v >= lo && v <= hi {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
            inside += 1;
        }
    }
    if inside == 0 {
        return Err(Error::EmptySample("no values inside the histogram range".into()));
    }
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, c)| DensityBin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            density: *c as f64 / (inside as f64 * width),
        })
        .collect())
}
