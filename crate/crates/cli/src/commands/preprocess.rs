use std::path::Path;

use pmquant::datapipe::{preprocess, Dataset};

use super::{create_out, write_text};
use crate::config::{Overrides, RunConfig};
use crate::manifest::RunManifest;
use crate::UsageError;

pub fn run(config: Option<&Path>, o: &Overrides, out: &Path) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply(o)?;
    let mut manifest = RunManifest::start("preprocess", config, out);
    let dataset: Dataset<f32> = match (&cfg.synthetic, &cfg.preprocess) {
        (Some(s), None) => {
            log::info!("generating {} synthetic samples", s.samples);
            manifest.seed = Some(s.spec.seed);
            s.spec.generate(s.samples, s.split_ratio)?
        }
        (None, Some(p)) => {
            log::info!("preprocessing scenes from {}", p.scene_dir.display());
            manifest = manifest.input(&p.scene_dir).input(&p.truth_dir);
            manifest.seed = Some(p.seed);
            preprocess(p)?
        }
        (Some(_), Some(_)) => return Err(UsageError("config has both [preprocess] and [synthetic]; pick one".into()).into()),
        (None, None) => return Err(UsageError("config needs a [preprocess] or a [synthetic] section".into()).into()),
    };
    create_out(out)?;
    dataset.write(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    log::info!(
        "wrote {} samples ({} train / {} test) to {}",
        dataset.samples.len(),
        dataset.manifest.train.len(),
        dataset.manifest.test.len(),
        out.display()
    );
    manifest.finish()
}
