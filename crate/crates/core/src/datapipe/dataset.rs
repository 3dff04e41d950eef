//! Prepared-dataset container and its on-disk layout.
//!
//! ```text
//! <root>/dataset.json        manifest: bands, samples, split, provenance
//! <root>/band_stats.json     per-band training min/max used for normalization
//! <root>/train.txt           training sample ids, one per line
//! <root>/test.txt            test sample ids
//! <root>/samples/<id>/input.tif    normalized band stack
//! <root>/samples/<id>/target.tif   ground truth in physical units (NaN = nodata)
//! <root>/samples/<id>/mask.tif     combined validity mask (1 = usable)
//! <root>/samples/<id>/truth_q.tif  optional true lower/median/upper quantiles
//! <root>/samples/<id>/meta.json    per-sample metadata
//! ```
//!
//! Sample ids are `<location>_<YYYY-MM>` and every listing is sorted by
//! (month, location), so a dataset written twice from the same inputs is
//! byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::composite::MonthKey;
use super::masks::OutlierCut;
use super::normalize::BandStats;
use crate::error::{Error, Result};
use crate::raster::geotiff;
use crate::raster::{BandStack, MaskRaster, QuantileTriple, Raster, RasterGrid};
use crate::scalar::Scalar;

pub const DATASET_FORMAT: u32 = 1;
const TRUTH_IDS: [&str; 3] = ["lower", "median", "upper"];

/// One training/evaluation example on a single grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub location: String,
    pub month: MonthKey,
    pub input: BandStack<T>,
    pub target: Raster<T>,
    pub mask: MaskRaster,
    /// Known conditional quantiles, for synthetic data.
    pub truth: Option<QuantileTriple<T>>,
}

impl<T: Scalar> Sample<T> {
    /// Aligns the parts and restricts the mask to pixels with a finite target.
    pub fn new(
        location: &str,
        month: MonthKey,
        mut input: BandStack<T>,
        mut target: Raster<T>,
        mut mask: MaskRaster,
        truth: Option<QuantileTriple<T>>,
    ) -> Result<Self> {
        if location.is_empty() || location.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid location key `{location}`")));
        }
        input.grid.ensure_same(&target.grid, "target")?;
        input.grid.ensure_same(&mask.grid, "mask")?;
        if let Some(t) = &truth {
            if t.dim() != input.grid.shape() {
                return Err(Error::Shape(format!("truth maps {:?} vs grid {:?}", t.dim(), input.grid.shape())));
            }
        }
        input.acquired.get_or_insert(month.first_day());
        ndarray::Zip::from(&mut mask.valid).and(&mut target.valid).and(&mut target.values).for_each(|m, ok, v| {
            *ok &= v.is_finite();
            if !*ok {
                *v = T::zero();
            }
            *m &= *ok;
        });
        Ok(Self { id: format!("{location}_{month}"), location: location.to_string(), month, input, target, mask, truth })
    }

    pub fn grid(&self) -> &RasterGrid {
        &self.input.grid
    }

    pub fn valid_pixels(&self) -> usize {
        self.mask.valid_count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub location: String,
    pub month: MonthKey,
    pub height: usize,
    pub width: usize,
    pub valid_pixels: usize,
    pub has_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// `synthetic` or `preprocess`.
    pub source: String,
    pub seed: u64,
    pub split_ratio: f64,
    pub band_ids: Vec<String>,
    /// Quantile levels of `truth_q.tif`, when present.
    pub truth_levels: Option<[f64; 3]>,
    pub outlier_cut: Option<OutlierCut>,
    pub samples: Vec<SampleEntry>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleMeta {
    id: String,
    location: String,
    month: MonthKey,
    grid: RasterGrid,
    valid_pixels: usize,
}

/// A prepared dataset: normalized inputs, physical targets and the split.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub manifest: DatasetManifest,
    pub band_stats: BandStats,
    pub samples: Vec<Sample<T>>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn write_listing(path: &Path, ids: &[String]) -> Result<()> {
    let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl<T: Scalar> Dataset<T> {
    /// Assembles a dataset; `train`/`test` are indices into `samples`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        source: &str,
        seed: u64,
        split_ratio: f64,
        band_stats: BandStats,
        mut samples: Vec<Sample<T>>,
        train: &[usize],
        test: &[usize],
        truth_levels: Option<[f64; 3]>,
        outlier_cut: Option<OutlierCut>,
    ) -> Result<Self> {
        let band_ids = band_stats.ids();
        for s in &samples {
            if s.input.band_ids() != band_ids {
                return Err(Error::Shape(format!("sample {} has bands {:?}, expected {band_ids:?}", s.id, s.input.band_ids())));
            }
        }
        let ids = |idx: &[usize]| -> Result<Vec<String>> {
            let mut out: Vec<(MonthKey, String)> = idx
                .iter()
                .map(|&i| {
                    samples
                        .get(i)
                        .map(|s| (s.month, s.location.clone()))
                        .ok_or_else(|| Error::Size(format!("split index {i} out of range")))
                })
                .collect::<Result<_>>()?;
            out.sort();
            Ok(out.into_iter().map(|(m, l)| format!("{l}_{m}")).collect())
        };
        let (train, test) = (ids(train)?, ids(test)?);
        samples.sort_by(|a, b| (a.month, &a.location).cmp(&(b.month, &b.location)));
        if samples.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::Config("duplicate sample ids".into()));
        }
        let entries = samples
            .iter()
            .map(|s| SampleEntry {
                id: s.id.clone(),
                location: s.location.clone(),
                month: s.month,
                height: s.grid().height,
                width: s.grid().width,
                valid_pixels: s.valid_pixels(),
                has_truth: s.truth.is_some(),
            })
            .collect();
        let manifest = DatasetManifest {
            format_version: DATASET_FORMAT,
            source: source.to_string(),
            seed,
            split_ratio,
            band_ids,
            truth_levels,
            outlier_cut,
            samples: entries,
            train,
            test,
        };
        Ok(Self { manifest, band_stats, samples })
    }

    pub fn sample(&self, id: &str) -> Option<&Sample<T>> {
        self.samples.iter().find(|s| s.id == id)
    }

    fn pick(&self, ids: &[String]) -> Vec<&Sample<T>> {
        ids.iter().filter_map(|id| self.sample(id)).collect()
    }

    pub fn train(&self) -> Vec<&Sample<T>> {
        self.pick(&self.manifest.train)
    }

    pub fn test(&self) -> Vec<&Sample<T>> {
        self.pick(&self.manifest.test)
    }

    pub fn band_count(&self) -> usize {
        self.manifest.band_ids.len()
    }

    pub fn sample_dir(root: &Path, id: &str) -> PathBuf {
        root.join("samples").join(id)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root.join("samples")).map_err(|e| Error::io(root, e))?;
        write_json(&root.join("dataset.json"), &self.manifest)?;
        write_json(&root.join("band_stats.json"), &self.band_stats)?;
        write_listing(&root.join("train.txt"), &self.manifest.train)?;
        write_listing(&root.join("test.txt"), &self.manifest.test)?;
        for s in &self.samples {
            let dir = Self::sample_dir(root, &s.id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            geotiff::write_stack(&dir.join("input.tif"), &s.input)?;
            geotiff::write_raster(&dir.join("target.tif"), "target", &s.target)?;
            geotiff::write_mask(&dir.join("mask.tif"), &s.mask)?;
            if let Some(t) = &s.truth {
                let bands =
                    TRUTH_IDS.iter().zip(t.heads()).map(|(id, v)| crate::raster::Band { id: id.to_string(), values: v.clone() }).collect();
                let stack = BandStack::new(s.grid().clone(), bands, None)?;
                geotiff::write_stack(&dir.join("truth_q.tif"), &stack)?;
            }
            let meta = SampleMeta {
                id: s.id.clone(),
                location: s.location.clone(),
                month: s.month,
                grid: s.grid().clone(),
                valid_pixels: s.valid_pixels(),
            };
            write_json(&dir.join("meta.json"), &meta)?;
        }
        Ok(())
    }

    pub fn read(root: &Path) -> Result<Self> {
        let manifest: DatasetManifest = read_json(&root.join("dataset.json"))?;
        if manifest.format_version != DATASET_FORMAT {
            return Err(Error::format(root.join("dataset.json"), format!("unsupported format {}", manifest.format_version)));
        }
        let band_stats: BandStats = read_json(&root.join("band_stats.json"))?;
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for entry in &manifest.samples {
            let dir = Self::sample_dir(root, &entry.id);
            let meta: SampleMeta = read_json(&dir.join("meta.json"))?;
            let input = geotiff::read_stack::<T>(&dir.join("input.tif"))?;
            let target = geotiff::read_raster::<T>(&dir.join("target.tif"))?;
            let mask = geotiff::read_mask(&dir.join("mask.tif"))?;
            meta.grid.ensure_same(&input.grid, &format!("{}: input", entry.id))?;
            let truth = if entry.has_truth {
                let t = geotiff::read_stack::<T>(&dir.join("truth_q.tif"))?;
                let [l, m, u]: [Array2<T>; 3] = t
                    .bands
                    .into_iter()
                    .map(|b| b.values)
                    .collect::<Vec<_>>()
                    .try_into()
                    .map_err(|_| Error::format(dir.join("truth_q.tif"), "expected three bands"))?;
                Some(QuantileTriple::new(l, m, u)?)
            } else {
                None
            };
            let sample = Sample::new(&entry.location, entry.month, input, target, mask, truth)?;
            if sample.id != entry.id {
                return Err(Error::format(dir.join("meta.json"), format!("sample id {} does not match {}", sample.id, entry.id)));
            }
            samples.push(sample);
        }
        Ok(Self { manifest, band_stats, samples })
    }
}
