use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Band, BandStack, Raster};
use crate::scalar::Scalar;

/// Observed `[min, max]` of one band (or of the target) over a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRange {
    pub id: String,
    pub min: f64,
    pub max: f64,
}

impl BandRange {
    fn fit<'a>(id: &str, values: impl Iterator<Item = f64> + 'a) -> Result<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            return Err(Error::EmptySample(format!("band `{id}` has no valid pixels in the training split")));
        }
        if max <= min {
            return Err(Error::DegenerateBand { band: id.to_string(), value: min });
        }
        Ok(Self { id: id.to_string(), min, max })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    /// Maps into `[0, 1]`, clamping values outside the fitted range.
    pub fn normalize(&self, v: f64) -> f64 {
        ((v - self.min) / self.range()).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + v * self.range()
    }
}

/// Per-band min/max fitted on training inputs only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub bands: Vec<BandRange>,
}

impl BandStats {
    pub fn fit<T: Scalar>(train: &[&BandStack<T>]) -> Result<Self> {
        let first = train.first().ok_or_else(|| Error::EmptySample("no training stacks".into()))?;
        let bands = first
            .bands
            .iter()
            .map(|band| {
                let mut planes = Vec::with_capacity(train.len());
                for s in train {
                    let b = s.band(&band.id).ok_or_else(|| Error::Shape(format!("stack lacks band `{}`", band.id)))?;
                    planes.push((&b.values, &s.valid));
                }
                BandRange::fit(
                    &band.id,
                    planes.into_iter().flat_map(|(v, ok)| v.iter().zip(ok.iter()).filter(|(_, ok)| **ok).map(|(v, _)| v.as_f64())),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { bands })
    }

    pub fn ids(&self) -> Vec<String> {
        self.bands.iter().map(|b| b.id.clone()).collect()
    }

    fn apply<T: Scalar>(&self, stack: &BandStack<T>, f: impl Fn(&BandRange, f64) -> f64) -> Result<BandStack<T>> {
        let bands = self
            .bands
            .iter()
            .map(|range| {
                let b = stack.band(&range.id).ok_or_else(|| Error::Shape(format!("stack lacks band `{}`", range.id)))?;
                // Invalid pixels are zeroed so no stale value leaks into the network.
                let values =
                    Zip::from(&b.values).and(&stack.valid).map_collect(|&v, &ok| if ok { T::lit(f(range, v.as_f64())) } else { T::zero() });
                Ok(Band { id: range.id.clone(), values })
            })
            .collect::<Result<_>>()?;
        BandStack::with_validity(stack.grid.clone(), bands, stack.valid.clone(), stack.acquired)
    }

    /// Scales each band to `[0, 1]` and reorders bands to match the fitted order.
    pub fn normalize<T: Scalar>(&self, stack: &BandStack<T>) -> Result<BandStack<T>> {
        self.apply(stack, BandRange::normalize)
    }

    pub fn denormalize<T: Scalar>(&self, stack: &BandStack<T>) -> Result<BandStack<T>> {
        self.apply(stack, BandRange::denormalize)
    }
}

/// Target range fitted on valid training-target pixels.
pub fn fit_target_range<T: Scalar>(targets: &[&Raster<T>], valid: &[&ndarray::Array2<bool>]) -> Result<BandRange> {
    BandRange::fit(
        "target",
        targets.iter().zip(valid).flat_map(|(t, m)| t.values.iter().zip(m.iter()).filter(|(_, ok)| **ok).map(|(v, _)| v.as_f64())),
    )
}
