use std::path::{Path, PathBuf};

use pmquant::datapipe::{Dataset, Sample};
use pmquant::metrics::{prediction_quantile, MetricsAccumulator};
use pmquant::model::checkpoint::Checkpoint;
use pmquant::trainer::predict;
use pmquant::{MetricsReport, QuantileTriple};
use serde::Serialize;

use super::{create_out, csv_writer, require_dataset, target_range, write_json};
use crate::config::{Overrides, RunConfig};
use crate::manifest::RunManifest;
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

/// Level at which the predicted-concentration quantile is reported.
pub const SHIFT_LEVEL: f64 = 0.9;

#[derive(Debug, Serialize)]
struct SampleMetrics {
    id: String,
    metrics: Option<MetricsReport>,
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    source: String,
    split: Split,
    quantiles: [f64; 3],
    pooled: MetricsReport,
    /// Nearest-rank 0.9-quantile of each predicted map over all valid pixels.
    prediction_q90: [f64; 3],
    samples: Vec<SampleMetrics>,
}

pub fn run(
    config: Option<&Path>,
    o: &Overrides,
    checkpoint: Option<&Path>,
    dataset: Option<PathBuf>,
    split: Split,
    oracle: bool,
    out: &Path,
) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply(o)?;
    let data_dir = require_dataset(dataset, cfg.dataset.as_ref())?;
    let mut manifest = RunManifest::start("evaluate", config, out).input(&data_dir);
    let data: Dataset<f32> = Dataset::read(&data_dir)?;
    let samples: Vec<&Sample<f32>> = match split {
        Split::Train => data.train(),
        Split::Test => data.test(),
        Split::All => data.samples.iter().collect(),
    };

    let (source, quantiles, preds): (String, [f64; 3], Vec<QuantileTriple<f32>>) = if oracle {
        let levels = data
            .manifest
            .truth_levels
            .ok_or_else(|| pmquant::Error::Metadata(format!("{} has no true quantile maps", data_dir.display())))?;
        let preds = samples
            .iter()
            .map(|s| s.truth.clone().ok_or_else(|| pmquant::Error::Metadata(format!("sample {} has no truth", s.id))))
            .collect::<pmquant::Result<_>>()?;
        ("oracle".into(), levels, preds)
    } else {
        let path = checkpoint.ok_or_else(|| UsageError("--checkpoint is required unless --oracle is set".into()))?;
        manifest = manifest.input(path);
        let ck = Checkpoint::<f32>::load(path)?;
        let range = target_range(&ck)?;
        let (model, _, _) = ck.into_model()?;
        let q = model.config().quantiles;
        let preds = samples.iter().map(|s| predict(&model, &s.input, &range).map(|p| p.triple)).collect::<pmquant::Result<_>>()?;
        (path.display().to_string(), [q.lower, 0.5, q.upper], preds)
    };

    let mut pooled = MetricsAccumulator::default();
    let mut per_sample = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(&preds) {
        let (t, m) = (s.target.values.view(), s.mask.valid.view());
        pooled.add(p, t, m)?;
        let mut acc = MetricsAccumulator::default();
        acc.add(p, t, m)?;
        let metrics = acc.report().ok();
        if metrics.is_none() {
            log::warn!("sample {} has no valid pixels", s.id);
        }
        per_sample.push(SampleMetrics { id: s.id.clone(), metrics });
    }
    let pooled = pooled.report()?;
    let prediction_q90 = pooled_quantiles(&samples, &preds)?;

    create_out(out)?;
    let mut w = csv_writer(&out.join("metrics.csv"))?;
    let mut header = vec!["sample"];
    header.extend(MetricsReport::CSV_HEADER);
    w.write_record(&header)?;
    for s in &per_sample {
        if let Some(m) = &s.metrics {
            w.write_record(std::iter::once(s.id.clone()).chain(m.csv_record()))?;
        }
    }
    w.write_record(std::iter::once("pooled".to_string()).chain(pooled.csv_record()))?;
    w.flush()?;
    write_json(&out.join("metrics.json"), &EvalOutput { source, split, quantiles, pooled, prediction_q90, samples: per_sample })?;
    log::info!(
        "MAE {:.4}, coverage {:.4}, median width {:.4}, above lower {:.4}, below upper {:.4}",
        pooled.masked_mae,
        pooled.interval_coverage,
        pooled.median_interval_width,
        pooled.frac_above_lower,
        pooled.frac_below_upper
    );
    manifest.finish()
}

fn pooled_quantiles(samples: &[&Sample<f32>], preds: &[QuantileTriple<f32>]) -> pmquant::Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (h, slot) in out.iter_mut().enumerate() {
        let mut values = Vec::new();
        let mut mask = Vec::new();
        for (s, p) in samples.iter().zip(preds) {
            values.extend(p.heads()[h].iter().copied());
            mask.extend(s.mask.valid.iter().copied());
        }
        let n = values.len();
        let values = ndarray::Array2::from_shape_vec((1, n), values).expect("flat");
        let mask = ndarray::Array2::from_shape_vec((1, n), mask).expect("flat");
        *slot = prediction_quantile(values.view(), mask.view(), SHIFT_LEVEL)? as f64;
    }
    Ok(out)
}
