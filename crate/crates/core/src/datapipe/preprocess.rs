//! Raw scenes and ground-truth maps to a prepared dataset.
//!
//! Expected input layout:
//!
//! ```text
//! <scene_dir>/<location>/<scene>.tif    multiband scene, any supported CRS
//! <scene_dir>/<location>/<scene>.json   {"acquired": "YYYY-MM-DD", "cloud_cover": 12.5}
//! <truth_dir>/<location>/<YYYY-MM>.tif  ground truth on the target WGS84 grid
//! ```
//!
//! The quality band (default `QA_PIXEL`) is consumed by cloud masking and
//! never reaches the model; `cloud_cover` is only needed for scenes without it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::composite::{monthly_composite, MonthKey};
use super::dataset::{Dataset, Sample};
use super::masks::{cloud_mask, combine_masks, CloudMaskConfig, OutlierCut, QaMetadata};
use super::normalize::BandStats;
use super::regrid::regrid_stack;
use super::split::split_indices;
use crate::error::{Error, Result};
use crate::raster::{geotiff, BandStack, MaskRaster, Raster};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub scene_dir: PathBuf,
    pub truth_dir: PathBuf,
    /// Bands removed before compositing; the panchromatic band by default.
    pub drop_bands: Vec<String>,
    pub qa_band: String,
    pub cloud: CloudMaskConfig,
    pub outlier_fraction: f64,
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            scene_dir: PathBuf::from("scenes"),
            truth_dir: PathBuf::from("truth"),
            drop_bands: vec!["B8".into()],
            qa_band: "QA_PIXEL".into(),
            cloud: CloudMaskConfig::default(),
            outlier_fraction: 0.01,
            split_ratio: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
struct SceneSidecar {
    acquired: NaiveDate,
    cloud_cover: Option<f64>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn is_tif(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"))
}

fn file_stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Reads one scene and applies its cloud mask; returns `None` if no pixel survives.
pub fn load_scene<T: Scalar>(path: &Path, cfg: &PreprocessConfig) -> Result<BandStack<T>> {
    let sidecar_path = path.with_extension("json");
    let text = fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: SceneSidecar = serde_json::from_str(&text).map_err(|e| Error::format(&sidecar_path, e.to_string()))?;
    let mut stack = geotiff::read_stack::<T>(path)?;
    stack.acquired = Some(sidecar.acquired);
    let qa_pixel = stack.take_band(&cfg.qa_band).map(|b| b.values.mapv(|v| v.as_f64().clamp(0.0, u16::MAX as f64) as u16));
    let qa = QaMetadata { qa_pixel, cloud_cover: sidecar.cloud_cover };
    let clouds = cloud_mask(&stack.grid, &qa, &cfg.cloud)?;
    let combined = combine_masks(&[&stack.mask(), &clouds])?;
    stack.valid = combined.valid;
    for id in &cfg.drop_bands {
        stack.take_band(id);
    }
    Ok(stack)
}

/// Runs the whole chain and returns the normalized, split dataset.
pub fn preprocess<T: Scalar>(cfg: &PreprocessConfig) -> Result<Dataset<T>> {
    let mut samples = Vec::new();
    let mut scene_count = 0usize;
    for loc_dir in sorted_entries(&cfg.truth_dir)? {
        if !loc_dir.is_dir() {
            continue;
        }
        let location = loc_dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let mut truth: BTreeMap<MonthKey, Raster<T>> = BTreeMap::new();
        for f in sorted_entries(&loc_dir)?.into_iter().filter(|p| is_tif(p)) {
            let month: MonthKey = file_stem(&f).parse()?;
            let raster = geotiff::read_raster::<T>(&f)?;
            if !raster.grid.crs.is_geographic() {
                return Err(Error::Metadata(format!("{}: ground truth must be in WGS84", f.display())));
            }
            truth.insert(month, raster);
        }
        let scene_loc = cfg.scene_dir.join(&location);
        if !scene_loc.is_dir() {
            log::warn!("no scenes for location {location}; skipping");
            continue;
        }
        let mut regridded = Vec::new();
        for f in sorted_entries(&scene_loc)?.into_iter().filter(|p| is_tif(p)) {
            scene_count += 1;
            let scene = load_scene::<T>(&f, cfg)?;
            let month = MonthKey::of(scene.acquired.expect("set from sidecar"));
            match truth.get(&month) {
                Some(t) => regridded.push(regrid_stack(&scene, &t.grid)?),
                None => log::warn!("{}: no ground truth for {month}; skipping", f.display()),
            }
        }
        if regridded.is_empty() {
            continue;
        }
        // Composites group by month; scenes of one month share that month's truth grid.
        let mut by_grid: BTreeMap<MonthKey, Vec<BandStack<T>>> = BTreeMap::new();
        for s in regridded {
            by_grid.entry(MonthKey::of(s.acquired.expect("dated"))).or_default().push(s);
        }
        for (month, scenes) in by_grid {
            let composite = monthly_composite(&scenes)?.remove(&month).expect("single month");
            let target = truth.remove(&month).expect("checked above");
            let availability = combine_masks(&[&composite.mask(), &target.mask()])?;
            samples.push(Sample::new(&location, month, composite, target, availability, None)?);
        }
    }
    if scene_count == 0 {
        return Err(Error::io(&cfg.scene_dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no scenes found")));
    }
    if samples.is_empty() {
        return Err(Error::EmptySample("no scene matched a ground-truth month".into()));
    }
    finish("preprocess", samples, cfg.split_ratio, cfg.seed, cfg.outlier_fraction, None)
}

/// Splits, applies the pooled outlier cut and training-only band normalization.
pub fn finish<T: Scalar>(
    source: &str,
    mut samples: Vec<Sample<T>>,
    ratio: f64,
    seed: u64,
    outlier_fraction: f64,
    truth_levels: Option<[f64; 3]>,
) -> Result<Dataset<T>> {
    // Splits are drawn over a canonical order so file-system order cannot leak in.
    samples.sort_by(|a, b| (a.month, &a.location).cmp(&(b.month, &b.location)));
    let (train, test) = split_indices(samples.len(), ratio, seed)?;
    let train_targets: Vec<Raster<T>> = train
        .iter()
        .map(|&i| {
            let s = &samples[i];
            Raster { grid: s.target.grid.clone(), values: s.target.values.clone(), valid: s.mask.valid.clone() }
        })
        .collect();
    let cut = OutlierCut::fit(&train_targets.iter().collect::<Vec<_>>(), outlier_fraction)?;
    for s in &mut samples {
        let keep = cut.mask(&s.target);
        s.mask = combine_masks(&[&s.mask, &keep])?;
    }
    let stats = BandStats::fit(&train.iter().map(|&i| &samples[i].input).collect::<Vec<_>>())?;
    for s in &mut samples {
        s.input = stats.normalize(&s.input)?;
    }
    let mask_check = |m: &MaskRaster| m.valid_count();
    if samples.iter().all(|s| mask_check(&s.mask) == 0) {
        return Err(Error::EmptySample("every sample is fully masked".into()));
    }
    Dataset::new(source, seed, ratio, stats, samples, &train, &test, truth_levels, Some(cut))
}
