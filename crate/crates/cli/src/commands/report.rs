use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use pmquant::metrics::{density_histogram, paired_scatter, prediction_quantile, RegionLabels};
use pmquant::raster::geotiff::{read_labels, read_mask, read_raster};
use pmquant::raster::Raster;
use pmquant::trainer::TrainHistory;
use pmquant::MetricsReport;
use serde::Deserialize;

use super::predict::HEAD_FILES;
use super::{create_out, csv_writer};
use crate::manifest::RunManifest;
use crate::UsageError;

const SHIFT_LEVEL: f64 = super::evaluate::SHIFT_LEVEL;

struct Maps {
    heads: Vec<Raster<f32>>,
    valid: Array2<bool>,
}

fn read_maps(dir: &Path) -> anyhow::Result<Maps> {
    let mask = read_mask(&dir.join("mask.tif"))?;
    let mut heads = Vec::new();
    for name in HEAD_FILES {
        let r = read_raster::<f32>(&dir.join(format!("{name}.tif")))?;
        mask.grid.ensure_same(&r.grid, name)?;
        heads.push(r);
    }
    Ok(Maps { heads, valid: mask.valid })
}

fn read_regions(path: &Path) -> anyhow::Result<RegionLabels> {
    let (_, labels) = read_labels(path)?;
    let names_path = path.with_extension("json");
    let names: BTreeMap<u32, String> = if names_path.exists() {
        let text = std::fs::read_to_string(&names_path).map_err(|e| pmquant::Error::Io { path: names_path.clone(), source: e })?;
        serde_json::from_str(&text).map_err(|e| pmquant::Error::Format { path: names_path.clone(), reason: e.to_string() })?
    } else {
        BTreeMap::new()
    };
    Ok(RegionLabels { labels, names })
}

#[derive(Debug, Deserialize)]
struct EvalFile {
    source: String,
    pooled: MetricsReport,
    prediction_q90: [f64; 3],
}

pub fn run(
    pair: Option<&[PathBuf]>,
    regions: Option<&Path>,
    evals: &[PathBuf],
    runs: &[PathBuf],
    bins: usize,
    out: &Path,
) -> anyhow::Result<()> {
    if pair.is_none() && evals.is_empty() && runs.is_empty() {
        return Err(UsageError("nothing to report: pass --pair, --eval or --run".into()).into());
    }
    let mut manifest = RunManifest::start("report", None, out);
    create_out(out)?;
    if let Some([a, b]) = pair {
        manifest = manifest.input(a).input(b);
        let regions = match regions {
            Some(p) => {
                manifest = manifest.input(p);
                Some(read_regions(p)?)
            }
            None => None,
        };
        pair_tables(a, b, regions.as_ref(), bins, out)?;
    }
    if !evals.is_empty() {
        let mut w = csv_writer(&out.join("metrics_table.csv"))?;
        let mut header = vec!["eval", "source"];
        header.extend(MetricsReport::CSV_HEADER);
        header.extend(["q90_lower", "q90_median", "q90_upper"]);
        w.write_record(&header)?;
        for dir in evals {
            manifest = manifest.input(dir);
            let path = dir.join("metrics.json");
            let text = std::fs::read_to_string(&path).map_err(|e| pmquant::Error::Io { path: path.clone(), source: e })?;
            let e: EvalFile = serde_json::from_str(&text).map_err(|err| pmquant::Error::Format { path, reason: err.to_string() })?;
            let mut row = vec![dir.display().to_string(), e.source];
            row.extend(e.pooled.csv_record());
            row.extend(e.prediction_q90.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    if !runs.is_empty() {
        let mut w = csv_writer(&out.join("curves.csv"))?;
        w.write_record(["run", "epoch", "train_loss", "train_mae", "val_mae", "val_coverage"])?;
        for dir in runs {
            manifest = manifest.input(dir);
            let history = read_history(&dir.join("history.csv"))?;
            for r in history.records {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                w.write_record([
                    dir.display().to_string(),
                    r.epoch.to_string(),
                    r.train_loss.to_string(),
                    r.train_mae.to_string(),
                    opt(r.val_mae),
                    opt(r.val_coverage),
                ])?;
            }
        }
        w.flush()?;
    }
    manifest.finish()
}

fn read_history(path: &Path) -> anyhow::Result<TrainHistory> {
    let f = std::fs::File::open(path).map_err(|e| pmquant::Error::Io { path: path.to_path_buf(), source: e })?;
    let records = csv::Reader::from_reader(f).deserialize().collect::<Result<Vec<_>, _>>()?;
    Ok(TrainHistory { records })
}

fn pair_tables(a: &Path, b: &Path, regions: Option<&RegionLabels>, bins: usize, out: &Path) -> anyhow::Result<()> {
    let (ma, mb) = (read_maps(a)?, read_maps(b)?);
    ma.heads[0].grid.ensure_same(&mb.heads[0].grid, "second map")?;
    let valid = &ma.valid & &mb.valid;

    let mut scatter = csv_writer(&out.join("scatter.csv"))?;
    scatter.write_record(["quantile", "row", "col", "value_a", "value_b", "region"])?;
    let mut shift = csv_writer(&out.join("quantile_shift.csv"))?;
    shift.write_record(["quantile", "level", "value_a", "value_b", "shift"])?;
    for (h, name) in HEAD_FILES.iter().enumerate() {
        let (ra, rb) = (&ma.heads[h], &mb.heads[h]);
        for row in paired_scatter(ra.values.view(), rb.values.view(), regions, valid.view())? {
            scatter.write_record([
                name.to_string(),
                row.row.to_string(),
                row.col.to_string(),
                row.value_a.to_string(),
                row.value_b.to_string(),
                row.region,
            ])?;
        }
        // Each map is summarized over its own footprint.
        let qa = prediction_quantile(ra.values.view(), ma.valid.view(), SHIFT_LEVEL)? as f64;
        let qb = prediction_quantile(rb.values.view(), mb.valid.view(), SHIFT_LEVEL)? as f64;
        shift.write_record([name.to_string(), SHIFT_LEVEL.to_string(), qa.to_string(), qb.to_string(), (qb - qa).to_string()])?;
    }
    scatter.flush()?;
    shift.flush()?;

    let values = |m: &Maps, h: usize| -> Vec<f64> {
        m.heads[h].values.iter().zip(m.valid.iter()).filter(|(_, ok)| **ok).map(|(v, _)| *v as f64).collect()
    };
    let all: Vec<Vec<f64>> = (0..3).flat_map(|h| [values(&ma, h), values(&mb, h)]).collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in all.iter().flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    let mut density = csv_writer(&out.join("density.csv"))?;
    density.write_record(["map", "quantile", "bin_lo", "bin_hi", "density"])?;
    for (i, v) in all.iter().enumerate() {
        let (map, name) = (if i % 2 == 0 { "a" } else { "b" }, HEAD_FILES[i / 2]);
        if v.is_empty() {
            continue;
        }
        for bin in density_histogram(v, lo, hi, bins)? {
            density.write_record([map, name, &bin.lo.to_string(), &bin.hi.to_string(), &bin.density.to_string()])?;
        }
    }
    density.flush()?;
    Ok(())
}
