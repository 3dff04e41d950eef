use std::path::{Path, PathBuf};

use pmquant::datapipe::Dataset;
use pmquant::model::checkpoint::Checkpoint;
use pmquant::{Trainer, UNet};

use super::{create_out, csv_writer, init_logging, require_dataset, write_text};
use crate::config::{Overrides, RunConfig};
use crate::manifest::RunManifest;

pub fn run(config: Option<&Path>, o: &Overrides, dataset: Option<PathBuf>, checkpoint: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply(o)?;
    let data_dir = require_dataset(dataset, cfg.dataset.as_ref())?;
    create_out(out)?;
    init_logging(Some(&out.join("train.log")));
    let mut manifest = RunManifest::start("train", config, out).input(&data_dir);
    manifest.seed = Some(cfg.train.seed);

    let data: Dataset<f32> = Dataset::read(&data_dir)?;
    cfg.model.in_bands = data.band_count();
    cfg.dataset = Some(data_dir);
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    let (train, test) = (data.train(), data.test());

    let mut trainer = match checkpoint {
        Some(path) => {
            manifest = manifest.input(path);
            let ck = Checkpoint::<f32>::load(path)?;
            ck.ensure_compatible(&cfg.model)?;
            let t = Trainer::resume(ck, Some(cfg.train.clone()))?;
            log::info!("resuming from {} after epoch {}", path.display(), t.epochs_done());
            t
        }
        None => {
            let model = UNet::<f32>::build(&cfg.model, cfg.train.seed)?;
            log::info!("model has {} parameters", model.param_count());
            Trainer::new(model, cfg.train.clone(), &train, Some(data.band_stats.clone()))?
        }
    };
    trainer.fit(&train, &test, Some(out))?;

    let mut w = csv_writer(&out.join("history.csv"))?;
    for r in &trainer.history().records {
        w.serialize(r)?;
    }
    w.flush()?;
    if let Some(best) = trainer.best_epoch() {
        log::info!("best validation MAE at epoch {best}");
    }
    manifest.finish()
}
