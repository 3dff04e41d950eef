//! Minibatch training of the quantile U-Net against the aggregate loss.
//!
//! Every epoch draws its minibatches, crop offsets and dropout seeds from an
//! RNG keyed on `(seed, epoch)`, so a run resumed from a checkpoint follows
//! exactly the same trajectory as an uninterrupted one. Per-image gradients
//! are computed in parallel and summed in batch order.

mod adam;
mod predict;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::{fit_target_range, BandRange, BandStats, Sample};
use crate::error::{Error, Result};
use crate::losses::{aggregate_sum_and_grad, LossConfig};
use crate::metrics::MetricsAccumulator;
use crate::model::checkpoint::Checkpoint;
use crate::model::layers::{reflect_pad, Feat};
use crate::model::{Grads, Mode, UNet};
use crate::scalar::Scalar;

pub use adam::{Adam, AdamConfig};
pub use predict::{predict, predict_raw, Normalization, Prediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub loss: LossConfig,
    pub seed: u64,
    /// Side of the square random crops fed to the network.
    pub tile_size: usize,
    /// Write a resumable checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            minibatch_size: 15,
            steps_per_epoch: 100,
            learning_rate: 5e-5,
            dropout: 0.5,
            loss: LossConfig::default(),
            seed: 0,
            tile_size: 64,
            checkpoint_every: 10,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.minibatch_size == 0 || self.steps_per_epoch == 0 || self.tile_size == 0 {
            return Err(Error::Config("epochs, minibatch_size, steps_per_epoch and tile_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be nonnegative, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid Adam parameters {a:?}")));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Median-head MAE over the training tiles of the epoch, in target units.
    pub train_mae: f64,
    pub val_mae: Option<f64>,
    pub val_coverage: Option<f64>,
    pub skipped_steps: usize,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Everything a resumed run needs besides the parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerMeta {
    epoch: usize,
    adam_step: u64,
    train_config: TrainConfig,
    normalization: Normalization,
    history: TrainHistory,
    best: Option<(usize, f64)>,
}

/// One cropped training example.
struct Tile<T> {
    input: Feat<T>,
    /// Target in normalized units.
    target: Vec<T>,
    mask: Vec<bool>,
    dropout_seed: u64,
}

struct TileResult<T> {
    loss_sum: f64,
    abs_err_sum: f64,
    count: usize,
    grads: Option<Grads<T>>,
}

pub struct Trainer<T> {
    model: UNet<T>,
    cfg: TrainConfig,
    norm: Normalization,
    adam: Adam<T>,
    epoch: usize,
    history: TrainHistory,
    best: Option<(usize, f64, UNet<T>)>,
}

impl<T: Scalar> Trainer<T> {
    /// Fits the target scaling on `train` and prepares a fresh optimizer.
    pub fn new(mut model: UNet<T>, cfg: TrainConfig, train: &[&Sample<T>], band_stats: Option<BandStats>) -> Result<Self> {
        cfg.validate()?;
        model.set_dropout_rate(cfg.dropout)?;
        let targets: Vec<_> = train.iter().map(|s| &s.target).collect();
        let masks: Vec<_> = train.iter().map(|s| &s.mask.valid).collect();
        let target = fit_target_range(&targets, &masks)?;
        let adam = Adam::new(cfg.adam, model.params());
        let norm = Normalization { bands: band_stats, target };
        Ok(Self { model, cfg, norm, adam, epoch: 0, history: TrainHistory::default(), best: None })
    }

    /// Restores a run written by [`Trainer::checkpoint`]. A `cfg` may extend `epochs`.
    pub fn resume(ck: Checkpoint<T>, cfg: Option<TrainConfig>) -> Result<Self> {
        let meta: TrainerMeta = serde_json::from_value(ck.metadata.clone())
            .map_err(|e| Error::IncompatibleCheckpoint(format!("not a resumable training checkpoint: {e}")))?;
        let cfg = cfg.unwrap_or(meta.train_config);
        cfg.validate()?;
        let (mut model, state, _) = ck.into_model()?;
        model.set_dropout_rate(cfg.dropout)?;
        let adam = Adam::from_state(cfg.adam, meta.adam_step, model.params(), state)?;
        let best = meta.best.map(|(e, s)| (e, s, model.clone()));
        Ok(Self { model, cfg, norm: meta.normalization, adam, epoch: meta.epoch, history: meta.history, best })
    }

    pub fn model(&self) -> &UNet<T> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Best model by validation MAE (training MAE without a validation set).
    pub fn best_model(&self) -> &UNet<T> {
        self.best.as_ref().map_or(&self.model, |(_, _, m)| m)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|(e, _, _)| *e)
    }

    fn meta(&self) -> TrainerMeta {
        TrainerMeta {
            epoch: self.epoch,
            adam_step: self.adam.step,
            train_config: self.cfg.clone(),
            normalization: self.norm.clone(),
            history: self.history.clone(),
            best: self.best.as_ref().map(|(e, s, _)| (*e, *s)),
        }
    }

    /// Resumable checkpoint of the current state, including optimizer moments.
    pub fn checkpoint(&self) -> Result<Checkpoint<T>> {
        let meta = serde_json::to_value(self.meta()).map_err(|e| Error::Config(e.to_string()))?;
        let mut ck = Checkpoint::from_model(&self.model, meta);
        ck.state = self.adam.state_tensors(self.model.params());
        Ok(ck)
    }

    /// Checkpoint of the best model, loadable for prediction.
    pub fn best_checkpoint(&self) -> Result<Checkpoint<T>> {
        let meta = serde_json::to_value(TrainerMeta { epoch: self.best_epoch().unwrap_or(self.epoch), ..self.meta() })
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Checkpoint::from_model(self.best_model(), meta))
    }

    fn draw_tile(&self, s: &Sample<T>, rng: &mut ChaCha8Rng) -> Tile<T> {
        let (h, w) = s.grid().shape();
        let (th, tw) = (self.cfg.tile_size.min(h), self.cfg.tile_size.min(w));
        let r0 = rng.random_range(0..=h - th);
        let c0 = rng.random_range(0..=w - tw);
        let dropout_seed = rng.random::<u64>();
        let c = s.input.bands.len();
        let mut data = Vec::with_capacity(c * th * tw);
        for b in &s.input.bands {
            for r in r0..r0 + th {
                data.extend((c0..c0 + tw).map(|cc| b.values[(r, cc)]));
            }
        }
        let m = self.model.config().size_multiple();
        let (hp, wp) = (th.div_ceil(m) * m, tw.div_ceil(m) * m);
        let input = reflect_pad(&Feat::from_vec(c, th, tw, data), hp, wp);
        let mut target = vec![T::zero(); hp * wp];
        let mut mask = vec![false; hp * wp];
        let (lo, range) = (self.norm.target.min, self.norm.target.range());
        for r in 0..th {
            for cc in 0..tw {
                let ok = s.mask.valid[(r0 + r, c0 + cc)];
                mask[r * wp + cc] = ok;
                if ok {
                    target[r * wp + cc] = T::lit((s.target.values[(r0 + r, c0 + cc)].as_f64() - lo) / range);
                }
            }
        }
        Tile { input, target, mask, dropout_seed }
    }

    fn tile_pass(&self, tile: &Tile<T>) -> Result<TileResult<T>> {
        let tape = self.model.forward_tape(&tile.input, Mode::Train { seed: tile.dropout_seed })?;
        let outs = [&tape.outputs[0].data[..], &tape.outputs[1].data[..], &tape.outputs[2].data[..]];
        let range = self.norm.target.range();
        let (loss_sum, count, douts) = aggregate_sum_and_grad(outs, &tile.target, &tile.mask, &self.cfg.loss, range)?;
        let abs_err_sum = outs[1]
            .iter()
            .zip(&tile.target)
            .zip(&tile.mask)
            .filter(|(_, ok)| **ok)
            .map(|((o, y), _)| ((*o - *y).as_f64() * range).abs())
            .sum();
        let grads = (count > 0).then(|| {
            let mut g = Grads::zeros_like(self.model.params());
            self.model.backward(&tape, [&douts[0], &douts[1], &douts[2]], &mut g);
            g
        });
        Ok(TileResult { loss_sum, abs_err_sum, count, grads })
    }

    /// One optimizer step; `None` if the batch had no valid pixel and was skipped.
    fn step(&mut self, tiles: &[Tile<T>], step: usize) -> Result<Option<(f64, f64, usize)>> {
        let results: Vec<TileResult<T>> = tiles.par_iter().map(|t| self.tile_pass(t)).collect::<Result<_>>()?;
        let count: usize = results.iter().map(|r| r.count).sum();
        if count == 0 {
            log::warn!("epoch {} step {step}: minibatch has no valid pixels; step skipped", self.epoch + 1);
            return Ok(None);
        }
        let mut total = Grads::zeros_like(self.model.params());
        let (mut loss_sum, mut abs_sum) = (0.0, 0.0);
        for r in &results {
            loss_sum += r.loss_sum;
            abs_sum += r.abs_err_sum;
            if let Some(g) = &r.grads {
                total.add_assign(g);
            }
        }
        let loss = loss_sum / count as f64;
        if !loss.is_finite() || !total.is_finite() {
            return Err(Error::Divergence { epoch: self.epoch + 1, step, loss });
        }
        total.scale(T::lit(1.0 / count as f64));
        self.adam.update(self.model.params_mut(), &total, self.cfg.learning_rate);
        Ok(Some((loss_sum, abs_sum, count)))
    }

    /// Runs one epoch and appends its record.
    pub fn run_epoch(&mut self, train: &[&Sample<T>], val: &[&Sample<T>]) -> Result<&EpochRecord> {
        if train.is_empty() {
            return Err(Error::EmptySample("training set is empty".into()));
        }
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let mut order: Vec<usize> = Vec::new();
        let (mut loss_sum, mut abs_sum, mut count, mut skipped) = (0.0, 0.0, 0usize, 0usize);
        for step in 1..=self.cfg.steps_per_epoch {
            let mut tiles = Vec::with_capacity(self.cfg.minibatch_size);
            for _ in 0..self.cfg.minibatch_size {
                // Walk a shuffled pass over the set, reshuffling when it runs out.
                if order.is_empty() {
                    order = (0..train.len()).collect();
                    order.shuffle(&mut rng);
                }
                let idx = order.pop().expect("refilled");
                tiles.push(self.draw_tile(train[idx], &mut rng));
            }
            match self.step(&tiles, step)? {
                Some((l, a, n)) => {
                    loss_sum += l;
                    abs_sum += a;
                    count += n;
                }
                None => skipped += 1,
            }
        }
        if count == 0 {
            return Err(Error::EmptySample(format!("epoch {}: every minibatch was empty", self.epoch + 1)));
        }
        self.epoch += 1;
        let (val_mae, val_coverage) = if val.is_empty() {
            (None, None)
        } else {
            let report = self.evaluate(val)?;
            (Some(report.masked_mae), Some(report.interval_coverage))
        };
        let prior = self.history.last().map_or(0.0, |r| r.wall_clock_s);
        let record = EpochRecord {
            epoch: self.epoch,
            train_loss: loss_sum / count as f64,
            train_mae: abs_sum / count as f64,
            val_mae,
            val_coverage,
            skipped_steps: skipped,
            wall_clock_s: prior + started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} loss {:.5} train MAE {:.4} val MAE {} coverage {}",
            record.epoch,
            record.train_loss,
            record.train_mae,
            record.val_mae.map_or("-".into(), |v| format!("{v:.4}")),
            record.val_coverage.map_or("-".into(), |v| format!("{v:.3}")),
        );
        let score = record.val_mae.unwrap_or(record.train_mae);
        if self.best.as_ref().is_none_or(|(_, s, _)| score < *s) {
            self.best = Some((self.epoch, score, self.model.clone()));
        }
        self.history.records.push(record);
        Ok(self.history.last().expect("just pushed"))
    }

    /// Trains until `cfg.epochs` epochs are done, writing checkpoints into `out` if given.
    pub fn fit(&mut self, train: &[&Sample<T>], val: &[&Sample<T>], out: Option<&Path>) -> Result<()> {
        self.check_bands(train.iter().chain(val))?;
        let mut best_written = self.best_epoch();
        while self.epoch < self.cfg.epochs {
            self.run_epoch(train, val)?;
            if let Some(dir) = out {
                let every = self.cfg.checkpoint_every;
                if (every > 0 && self.epoch % every == 0) || self.epoch == self.cfg.epochs {
                    self.checkpoint()?.save(dir.join("last.ckpt"))?;
                }
                if self.best_epoch() != best_written {
                    self.best_checkpoint()?.save(dir.join("best.ckpt"))?;
                    best_written = self.best_epoch();
                }
            }
        }
        Ok(())
    }

    fn check_bands<'a>(&self, samples: impl Iterator<Item = &'a &'a Sample<T>>) -> Result<()> {
        let want = self.model.config().in_bands;
        for s in samples {
            if s.input.bands.len() != want {
                return Err(Error::Shape(format!("sample {} has {} bands, model expects {want}", s.id, s.input.bands.len())));
            }
        }
        Ok(())
    }

    /// Pooled metrics of the current model over full images.
    pub fn evaluate(&self, samples: &[&Sample<T>]) -> Result<crate::metrics::MetricsReport> {
        evaluate_model(&self.model, &self.norm.target, samples)
    }
}

/// Pooled metrics of `model` on `samples`, in target units.
pub fn evaluate_model<T: Scalar>(model: &UNet<T>, target: &BandRange, samples: &[&Sample<T>]) -> Result<crate::metrics::MetricsReport> {
    let preds: Vec<Prediction<T>> = samples.par_iter().map(|s| predict(model, &s.input, target)).collect::<Result<_>>()?;
    let mut acc = MetricsAccumulator::default();
    for (p, s) in preds.iter().zip(samples) {
        acc.add(&p.triple, s.target.values.view(), s.mask.valid.view())?;
    }
    acc.report()
}

/// Trains a model from scratch per `cfg`; returns the final model and its history.
pub fn train<T: Scalar>(
    model: UNet<T>,
    train_set: &[&Sample<T>],
    val_set: &[&Sample<T>],
    cfg: &TrainConfig,
) -> Result<(UNet<T>, TrainHistory)> {
    let mut t = Trainer::new(model, cfg.clone(), train_set, None)?;
    t.fit(train_set, val_set, None)?;
    Ok((t.model, t.history))
}
