pub mod evaluate;
pub mod predict;
pub mod preprocess;
pub mod report;
pub mod train;

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use pmquant::datapipe::BandRange;
use pmquant::model::checkpoint::Checkpoint;
use pmquant::trainer::Normalization;
use serde::Serialize;

use crate::UsageError;

/// Optional log file mirrored alongside stderr.
static LOG_FILE: Mutex<Option<File>> = Mutex::new(None);

struct Tee;

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if let Some(f) = LOG_FILE.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
            f.write_all(buf)?;
        }
        io::stderr().write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        if let Some(f) = LOG_FILE.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
            f.flush()?;
        }
        io::stderr().flush()
    }
}

pub fn init_logging(file: Option<&Path>) {
    if let Some(path) = file {
        if let Ok(f) = File::create(path) {
            *LOG_FILE.lock().unwrap_or_else(|e| e.into_inner()) = Some(f);
        }
        return;
    }
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Pipe(Box::new(Tee)))
        .try_init();
}

pub fn create_out(dir: &Path) -> pmquant::Result<()> {
    fs::create_dir_all(dir).map_err(|e| pmquant::Error::Io { path: dir.to_path_buf(), source: e })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).map_err(|e| pmquant::Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

pub fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| pmquant::Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(csv::Writer::from_writer(f))
}

pub fn require_dataset(flag: Option<PathBuf>, config: Option<&PathBuf>) -> anyhow::Result<PathBuf> {
    flag.or_else(|| config.cloned())
        .ok_or_else(|| UsageError("no dataset given: pass --dataset or set `dataset` in the config".into()).into())
}

/// Target and band scaling stored in a training checkpoint.
pub fn checkpoint_normalization(ck: &Checkpoint<f32>) -> pmquant::Result<Normalization> {
    ck.metadata
        .get("normalization")
        .cloned()
        .and_then(|v| serde_json::from_value(v).ok())
        .ok_or_else(|| pmquant::Error::IncompatibleCheckpoint("checkpoint carries no target normalization".into()))
}

pub fn target_range(ck: &Checkpoint<f32>) -> pmquant::Result<BandRange> {
    Ok(checkpoint_normalization(ck)?.target)
}
