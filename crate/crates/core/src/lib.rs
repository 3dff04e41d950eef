//! Dense per-pixel quantile regression of PM2.5 from multispectral rasters.
//!
//! A U-Net with three output heads predicts lower, median and upper
//! quantile maps, trained with a smoothed check (asymmetric Huber) loss.
//! The crate also covers scene preprocessing, evaluation metrics and a
//! synthetic scene generator with known conditional quantiles.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for common use.

pub mod datapipe;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod scalar;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use losses::{LossConfig, QuantileSpec, Smoothing};
pub use metrics::MetricsReport;
pub use model::{ModelConfig, UNet};
pub use raster::{BandStack, MaskRaster, QuantileTriple, Raster, RasterGrid};
pub use scalar::Scalar;
pub use trainer::{TrainConfig, Trainer};

pub type UNet32 = UNet<f32>;
pub type UNet64 = UNet<f64>;
pub type Trainer32 = Trainer<f32>;
pub type Trainer64 = Trainer<f64>;
pub type Dataset32 = datapipe::Dataset<f32>;
pub type Dataset64 = datapipe::Dataset<f64>;
pub type Sample32 = datapipe::Sample<f32>;
pub type BandStack32 = BandStack<f32>;
pub type QuantileTriple32 = QuantileTriple<f32>;
