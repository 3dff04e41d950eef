//! Synthetic scenes with analytically known conditional quantiles.
//!
//! Each sample draws two smooth random fields: a latent concentration `L`
//! and a noise-scale driver `u` in `[0, 1]`. The bands are fixed nonlinear
//! functions of `L` and `u` (band 0 is `u` itself), and the target is
//! `L + sigma(u) * N(0, 1)`, so the true q-quantile at every pixel is
//! `L + sigma(u) * Phi^-1(q)`.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::datapipe::preprocess::finish;
use crate::datapipe::{Dataset, MonthKey, Sample};
use crate::error::{Error, Result};
use crate::losses::QuantileSpec;
use crate::raster::{Band, BandStack, MaskRaster, QuantileTriple, Raster, RasterGrid};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Mean latent concentration (target units).
    pub latent_mean: f64,
    /// Standard deviation of the latent field around its mean.
    pub latent_std: f64,
    /// Typical wavelength of field structure, in pixels.
    pub correlation_length: f64,
    /// Noise standard deviation at `u = 0` and `u = 1`.
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Cloud disc radius range as a fraction of the shorter side; `(0, 0)` disables clouds.
    pub cloud_radius: (f64, f64),
    pub quantiles: QuantileSpec,
    pub outlier_fraction: f64,
    pub origin: (f64, f64),
    pub pixel_deg: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            bands: 10,
            latent_mean: 12.0,
            latent_std: 4.0,
            correlation_length: 24.0,
            sigma_min: 0.5,
            sigma_max: 3.0,
            cloud_radius: (0.1, 0.25),
            quantiles: QuantileSpec::default(),
            outlier_fraction: 0.0,
            origin: (-118.67, 34.34),
            pixel_deg: 0.01,
            seed: 0,
        }
    }
}

const WAVES: usize = 12;

/// Sum of random plane waves, scaled to unit variance.
fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize, length: f64) -> Array2<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..WAVES)
        .map(|_| {
            let theta = rng.random::<f64>() * 2.0 * PI;
            let lambda = length * (0.6 + 0.8 * rng.random::<f64>());
            let k = 2.0 * PI / lambda;
            (k * theta.cos(), k * theta.sin(), rng.random::<f64>() * 2.0 * PI)
        })
        .collect();
    let scale = (2.0 / WAVES as f64).sqrt();
    Array2::from_shape_fn((h, w), |(r, c)| {
        scale * waves.iter().map(|(kx, ky, phi)| (kx * c as f64 + ky * r as f64 + phi).cos()).sum::<f64>()
    })
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Band `b` as a function of standardized latent `z` and noise driver `u`.
fn band_value(b: usize, z: f64, u: f64) -> f64 {
    let k = b as f64;
    match b {
        0 => 0.2 + 0.6 * u,
        _ if b % 3 == 1 => 0.1 + 0.08 * k + 0.3 * logistic(z * (0.8 + 0.1 * k)),
        _ if b % 3 == 2 => 0.5 + 0.15 * (z * 0.7 + 0.2 * k).tanh() + 0.05 * u,
        _ => 0.3 + 0.1 * z + 0.02 * z * z + 0.05 * k.sin(),
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::Config("synthetic grid and band count must be positive".into()));
        }
        if !(self.latent_std > 0.0 && self.latent_std.is_finite()) {
            return Err(Error::Config(format!("latent_std must be positive, got {}", self.latent_std)));
        }
        if !(self.correlation_length > 0.0) {
            return Err(Error::Config("correlation_length must be positive".into()));
        }
        if !(self.sigma_min >= 0.0 && self.sigma_max >= self.sigma_min && self.sigma_max.is_finite()) {
            return Err(Error::Config(format!("need 0 <= sigma_min <= sigma_max, got {} and {}", self.sigma_min, self.sigma_max)));
        }
        let (r0, r1) = self.cloud_radius;
        if !(0.0..=1.0).contains(&r0) || !(r0..=1.0).contains(&r1) {
            return Err(Error::Config(format!("invalid cloud radius range {:?}", self.cloud_radius)));
        }
        self.quantiles.validate()
    }

    pub fn sigma(&self, u: f64) -> f64 {
        self.sigma_min + (self.sigma_max - self.sigma_min) * u
    }

    /// Closed-form q-quantile of the target at a pixel.
    pub fn true_quantile(&self, latent: f64, u: f64, q: f64) -> f64 {
        let sigma = self.sigma(u);
        if sigma == 0.0 {
            return latent;
        }
        latent + sigma * Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(q)
    }

    /// One draw from the target distribution at a pixel.
    pub fn draw_target(&self, latent: f64, u: f64, rng: &mut impl Rng) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        latent + self.sigma(u) * e
    }

    fn grid(&self) -> Result<RasterGrid> {
        RasterGrid::geographic(self.origin.0, self.origin.1, self.pixel_deg, self.width, self.height)
    }

    /// Latent field and noise driver of sample `index`.
    pub fn fields(&self, index: usize) -> (Array2<f64>, Array2<f64>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let (h, w) = (self.height, self.width);
        let latent = smooth_field(&mut rng, h, w, self.correlation_length).mapv(|z| self.latent_mean + self.latent_std * z);
        let u = smooth_field(&mut rng, h, w, self.correlation_length * 1.5).mapv(|z| logistic(1.5 * z));
        (latent, u, rng)
    }

    /// Generates sample `index`; identical `(spec, index)` give identical output.
    pub fn sample<T: Scalar>(&self, index: usize) -> Result<Sample<T>> {
        self.validate()?;
        let grid = self.grid()?;
        let (h, w) = (self.height, self.width);
        let (latent, u, mut rng) = self.fields(index);

        let bands = (0..self.bands)
            .map(|b| Band {
                id: format!("B{}", b + 1),
                values: ndarray::Zip::from(&latent)
                    .and(&u)
                    .map_collect(|&l, &u| T::lit(band_value(b, (l - self.latent_mean) / self.latent_std, u))),
            })
            .collect();
        let target = ndarray::Zip::from(&latent).and(&u).map_collect(|&l, &u| T::lit(self.draw_target(l, u, &mut rng)));
        let levels = self.quantiles.levels();
        let truth = levels.map(|q| ndarray::Zip::from(&latent).and(&u).map_collect(|&l, &u| T::lit(self.true_quantile(l, u, q))));
        let [lo, med, up] = truth;

        let mut valid = Array2::from_elem((h, w), true);
        let (r0, r1) = self.cloud_radius;
        if r1 > 0.0 {
            let side = h.min(w) as f64;
            let radius = side * (r0 + (r1 - r0) * rng.random::<f64>());
            let (cy, cx) = (rng.random::<f64>() * h as f64, rng.random::<f64>() * w as f64);
            valid.indexed_iter_mut().for_each(|((r, c), v)| {
                let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
                *v = dy.hypot(dx) > radius;
            });
        }

        let month = MonthKey::new(2013 + (index / 12 % 6) as i32, 1 + (index % 12) as u32)?;
        let input = BandStack::with_validity(grid.clone(), bands, valid.clone(), None)?;
        let target = Raster::new(grid.clone(), target)?;
        Sample::new(
            &format!("synth{index:04}"),
            month,
            input,
            target,
            MaskRaster::new(grid, valid)?,
            Some(QuantileTriple::new(lo, med, up)?),
        )
    }

    /// Raw (unnormalized) samples `0..n`.
    pub fn samples<T: Scalar>(&self, n: usize) -> Result<Vec<Sample<T>>> {
        (0..n).map(|i| self.sample(i)).collect()
    }

    /// A prepared dataset in the same form `preprocess` produces.
    pub fn generate<T: Scalar>(&self, n_samples: usize, split_ratio: f64) -> Result<Dataset<T>> {
        let samples = self.samples(n_samples)?;
        finish("synthetic", samples, split_ratio, self.seed, self.outlier_fraction, Some(self.quantiles.levels()))
    }
}
