use std::path::Path;

use pmquant::model::checkpoint::Checkpoint;
use pmquant::raster::geotiff::{read_stack, write_mask, write_raster};
use pmquant::raster::Raster;
use pmquant::trainer::{predict, predict_raw};

use super::{checkpoint_normalization, create_out};
use crate::manifest::RunManifest;

pub const HEAD_FILES: [&str; 3] = ["lower", "median", "upper"];

pub fn run(checkpoint: &Path, input: &Path, normalized: bool, out: &Path) -> anyhow::Result<()> {
    let manifest = RunManifest::start("predict", None, out).input(checkpoint).input(input);
    let ck = Checkpoint::<f32>::load(checkpoint)?;
    let norm = checkpoint_normalization(&ck)?;
    let (model, _, _) = ck.into_model()?;
    let stack = read_stack::<f32>(input)?;
    if stack.band_count() != model.config().in_bands {
        return Err(pmquant::Error::Shape(format!(
            "{} has {} bands, the model expects {}",
            input.display(),
            stack.band_count(),
            model.config().in_bands
        ))
        .into());
    }
    let pred = if normalized { predict(&model, &stack, &norm.target)? } else { predict_raw(&model, &stack, &norm)? };
    create_out(out)?;
    for (name, values) in HEAD_FILES.iter().zip(pred.triple.heads()) {
        let r = Raster::with_validity(stack.grid.clone(), values.clone(), pred.mask.valid.clone())?;
        write_raster(&out.join(format!("{name}.tif")), name, &r)?;
    }
    write_mask(&out.join("mask.tif"), &pred.mask)?;
    log::info!("wrote quantile maps to {}", out.display());
    manifest.finish()
}
