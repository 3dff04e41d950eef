use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Band, BandStack};
use crate::scalar::Scalar;

/// Calendar month of acquisition; the same month in different years is a different key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MonthKey {
    pub year: i32,
    pub month: u32,
}

impl MonthKey {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Metadata(format!("invalid month {month}")));
        }
        Ok(Self { year, month })
    }

    pub fn of(date: NaiveDate) -> Self {
        Self { year: date.year(), month: date.month() }
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("validated month")
    }
}

impl fmt::Display for MonthKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for MonthKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Metadata(format!("month key `{s}` is not YYYY-MM"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        Self::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }
}

impl TryFrom<String> for MonthKey {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MonthKey> for String {
    fn from(k: MonthKey) -> String {
        k.to_string()
    }
}

/// Per-month, per-band, per-pixel mean over the scenes in which the pixel is valid.
///
/// Bands are matched by id, in the order of the first scene of each month.
/// Pixels with no valid observation in a month are invalid in its composite.
pub fn monthly_composite<T: Scalar>(scenes: &[BandStack<T>]) -> Result<BTreeMap<MonthKey, BandStack<T>>> {
    let first = scenes.first().ok_or_else(|| Error::EmptySample("no scenes to composite".into()))?;
    let mut groups: BTreeMap<MonthKey, Vec<&BandStack<T>>> = BTreeMap::new();
    for s in scenes {
        first.grid.ensure_same(&s.grid, "composite scene")?;
        let date = s.acquired.ok_or_else(|| Error::Metadata("scene has no acquisition date".into()))?;
        groups.entry(MonthKey::of(date)).or_default().push(s);
    }
    groups.into_iter().map(|(key, group)| Ok((key, mean_stack(key, &group)?))).collect()
}

fn mean_stack<T: Scalar>(key: MonthKey, group: &[&BandStack<T>]) -> Result<BandStack<T>> {
    let shape = group[0].grid.shape();
    let mut count = Array2::<u32>::zeros(shape);
    for s in group {
        count.zip_mut_with(&s.valid, |c, &v| *c += v as u32);
    }
    let mut bands = Vec::with_capacity(group[0].bands.len());
    for band in &group[0].bands {
        let mut sum = Array2::<f64>::zeros(shape);
        for s in group {
            let b = s.band(&band.id).ok_or_else(|| Error::Shape(format!("scene from {key} lacks band `{}`", band.id)))?;
            ndarray::Zip::from(&mut sum).and(&b.values).and(&s.valid).for_each(|acc, &v, &ok| {
                if ok {
                    *acc += v.as_f64();
                }
            });
        }
        let values = ndarray::Zip::from(&sum).and(&count).map_collect(|&s, &n| if n > 0 { T::lit(s / n as f64) } else { T::zero() });
        bands.push(Band { id: band.id.clone(), values });
    }
    for s in group {
        if s.bands.len() != bands.len() {
            return Err(Error::Shape(format!("scenes from {key} disagree on band count ({} vs {})", s.bands.len(), bands.len())));
        }
    }
    BandStack::with_validity(group[0].grid.clone(), bands, count.mapv(|n| n > 0), Some(key.first_day()))
}
