//! Quantile (pinball) losses, their asymmetric-Huber smoothing and the
//! three-head aggregate objective.
//!
//! Pointwise functions are generic over the scalar type; reductions over
//! rasters accumulate in `f64`.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::QuantileTriple;
use crate::scalar::Scalar;

/// Quantile levels of the three heads; the middle one is always the median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    pub lower: f64,
    pub upper: f64,
}

impl QuantileSpec {
    pub const MEDIAN: f64 = 0.5;

    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let spec = Self { lower, upper };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.lower && self.lower < Self::MEDIAN && Self::MEDIAN < self.upper && self.upper < 1.0) {
            return Err(Error::Config(format!(
                "quantile levels must satisfy 0 < lower < 0.5 < upper < 1, got ({}, {})",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    /// `[lower, 0.5, upper]`, in head order.
    pub fn levels(&self) -> [f64; 3] {
        [self.lower, Self::MEDIAN, self.upper]
    }

    /// Nominal probability mass between the lower and upper quantiles.
    pub fn nominal_coverage(&self) -> f64 {
        self.upper - self.lower
    }
}

impl Default for QuantileSpec {
    fn default() -> Self {
        Self { lower: 0.1, upper: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    ExactCheck,
    Smoothed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub quantiles: QuantileSpec,
    pub gamma_lower: f64,
    pub gamma_upper: f64,
    /// Location of the quadratic-to-linear transition; larger is closer to the check function.
    pub alpha: f64,
    pub smoothing: Smoothing,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { quantiles: QuantileSpec::default(), gamma_lower: 1.0, gamma_upper: 1.0, alpha: 2.0, smoothing: Smoothing::Smoothed }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.quantiles.validate()?;
        if !(self.gamma_lower >= 0.0 && self.gamma_upper >= 0.0) {
            return Err(Error::Config(format!("aggregate weights must be nonnegative, got ({}, {})", self.gamma_lower, self.gamma_upper)));
        }
        if self.smoothing == Smoothing::Smoothed && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Head weights `[gamma_lower, 1, gamma_upper]`.
    pub fn weights(&self) -> [f64; 3] {
        [self.gamma_lower, 1.0, self.gamma_upper]
    }

    /// Validated pointwise losses for the three heads.
    pub fn head_losses<T: Scalar>(&self) -> Result<[PointwiseLoss<T>; 3]> {
        self.validate()?;
        let [l, m, u] = self.quantiles.levels();
        Ok([PointwiseLoss::new(l, self)?, PointwiseLoss::new(m, self)?, PointwiseLoss::new(u, self)?])
    }
}

fn check_level(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
    }
    Ok(())
}

fn check_residual<T: Scalar>(r: T) -> Result<()> {
    if !r.is_finite() {
        return Err(Error::Domain(format!("residual must be finite, got {r}")));
    }
    Ok(())
}

/// The check function `rho_q(r) = r*[r >= 0] - (1 - q)*r`.
pub fn check_loss<T: Scalar>(r: T, q: T) -> Result<T> {
    check_level(q.as_f64())?;
    check_residual(r)?;
    Ok(check_unchecked(r, q))
}

#[inline]
fn check_unchecked<T: Scalar>(r: T, q: T) -> T {
    let positive = if r >= T::zero() { r } else { T::zero() };
    positive - (T::one() - q) * r
}

/// Asymmetric Huber loss `r^2 - (r - delta_l)_+^2 - (-r - delta_u)_+^2`.
///
/// Quadratic on `[-delta_u, delta_l]`, linear with slope `2*delta_l` above and
/// `-2*delta_u` below.
pub fn asymmetric_huber<T: Scalar>(r: T, delta_l: T, delta_u: T) -> Result<T> {
    if !(delta_l > T::zero() && delta_u > T::zero()) {
        return Err(Error::Domain(format!("Huber thresholds must be positive, got ({delta_l}, {delta_u})")));
    }
    check_residual(r)?;
    Ok(huber_unchecked(r, delta_l, delta_u))
}

#[inline]
fn huber_unchecked<T: Scalar>(r: T, delta_l: T, delta_u: T) -> T {
    let above = (r - delta_l).max(T::zero());
    let below = (-r - delta_u).max(T::zero());
    r * r - above * above - below * below
}

#[inline]
fn huber_derivative<T: Scalar>(r: T, delta_l: T, delta_u: T) -> T {
    let two = T::lit(2.0);
    let above = (r - delta_l).max(T::zero());
    let below = (-r - delta_u).max(T::zero());
    two * r - two * above + two * below
}

/// Smoothed check function `alpha * H(r | q/(2 alpha), (1-q)/(2 alpha))`.
pub fn smoothed_check<T: Scalar>(r: T, q: T, alpha: T) -> Result<T> {
    check_level(q.as_f64())?;
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    check_residual(r)?;
    let two_alpha = alpha + alpha;
    Ok(alpha * huber_unchecked(r, q / two_alpha, (T::one() - q) / two_alpha))
}

/// Derivative of the configured pointwise loss with respect to the residual.
///
/// The exact check function has no derivative at `r = 0`; that case is an
/// error here, while [`PointwiseLoss::derivative`] applies the zero subgradient.
pub fn loss_gradient<T: Scalar>(r: T, q: T, cfg: &LossConfig) -> Result<T> {
    check_level(q.as_f64())?;
    check_residual(r)?;
    if cfg.smoothing == Smoothing::ExactCheck && r == T::zero() {
        return Err(Error::NonDifferentiable { q: q.as_f64() });
    }
    Ok(PointwiseLoss::new(q.as_f64(), cfg)?.derivative(r))
}

/// Pre-validated pointwise loss for one quantile level, used in hot loops.
#[derive(Debug, Clone, Copy)]
pub struct PointwiseLoss<T> {
    q: T,
    alpha: T,
    delta_l: T,
    delta_u: T,
    smoothing: Smoothing,
}

impl<T: Scalar> PointwiseLoss<T> {
    pub fn new(q: f64, cfg: &LossConfig) -> Result<Self> {
        check_level(q)?;
        if cfg.smoothing == Smoothing::Smoothed && !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
            return Err(Error::Domain(format!("alpha must be positive, got {}", cfg.alpha)));
        }
        let alpha = if cfg.smoothing == Smoothing::Smoothed { cfg.alpha } else { 1.0 };
        Ok(Self {
            q: T::lit(q),
            alpha: T::lit(alpha),
            delta_l: T::lit(q / (2.0 * alpha)),
            delta_u: T::lit((1.0 - q) / (2.0 * alpha)),
            smoothing: cfg.smoothing,
        })
    }

    pub fn level(&self) -> T {
        self.q
    }

    #[inline]
    pub fn value(&self, r: T) -> T {
        match self.smoothing {
            Smoothing::ExactCheck => check_unchecked(r, self.q),
            Smoothing::Smoothed => self.alpha * huber_unchecked(r, self.delta_l, self.delta_u),
        }
    }

    /// Derivative in `r`; the exact check function uses subgradient 0 at `r = 0`.
    #[inline]
    pub fn derivative(&self, r: T) -> T {
        match self.smoothing {
            Smoothing::ExactCheck => {
                if r > T::zero() {
                    self.q
                } else if r < T::zero() {
                    self.q - T::one()
                } else {
                    T::zero()
                }
            }
            Smoothing::Smoothed => self.alpha * huber_derivative(r, self.delta_l, self.delta_u),
        }
    }
}

fn check_aligned<T>(pred: &ArrayView2<T>, target: &ArrayView2<T>, mask: &ArrayView2<bool>) -> Result<()> {
    if pred.dim() != target.dim() || pred.dim() != mask.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?}, target {:?} and mask {:?} must share one grid",
            pred.dim(),
            target.dim(),
            mask.dim()
        )));
    }
    Ok(())
}

/// Sum of pointwise losses over valid pixels, and the number of valid pixels.
pub(crate) fn masked_loss_sum<T: Scalar>(
    loss: &PointwiseLoss<T>,
    pred: ArrayView2<T>,
    target: ArrayView2<T>,
    mask: ArrayView2<bool>,
) -> (f64, usize) {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for ((p, y), ok) in pred.iter().zip(target.iter()).zip(mask.iter()) {
        if *ok {
            sum += loss.value(*y - *p).as_f64();
            count += 1;
        }
    }
    (sum, count)
}

/// Mean quantile loss at level `q` over the pixels where `mask` is true.
pub fn masked_quantile_loss<T: Scalar>(
    pred: ArrayView2<T>,
    target: ArrayView2<T>,
    mask: ArrayView2<bool>,
    q: f64,
    cfg: &LossConfig,
) -> Result<f64> {
    check_aligned(&pred, &target, &mask)?;
    let loss = PointwiseLoss::<T>::new(q, cfg)?;
    for (y, ok) in target.iter().zip(mask.iter()) {
        if *ok {
            check_residual(*y)?;
        }
    }
    let (sum, count) = masked_loss_sum(&loss, pred, target, mask);
    if count == 0 {
        return Err(Error::EmptySample("quantile loss over an empty mask".into()));
    }
    Ok(sum / count as f64)
}

/// `gamma_l * L_{q_l} + L_{0.5} + gamma_u * L_{q_u}`.
pub fn aggregate_loss<T: Scalar>(
    preds: &QuantileTriple<T>,
    target: ArrayView2<T>,
    mask: ArrayView2<bool>,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let weights = cfg.weights();
    let levels = cfg.quantiles.levels();
    let mut total = 0.0;
    for ((head, w), q) in preds.heads().into_iter().zip(weights).zip(levels) {
        total += w * masked_quantile_loss(head.view(), target, mask, q, cfg)?;
    }
    Ok(total)
}

/// Weighted aggregate loss summed over valid pixels, with its gradient in each prediction.
///
/// Residuals are multiplied by `scale` before the pointwise loss, so
/// predictions and targets held in normalized units are compared in
/// physical units. Returns `(sum, valid count, [dL/dpred; 3])`; the caller
/// divides by the pooled valid count to obtain the mean.
pub fn aggregate_sum_and_grad<T: Scalar>(
    preds: [&[T]; 3],
    target: &[T],
    mask: &[bool],
    cfg: &LossConfig,
    scale: f64,
) -> Result<(f64, usize, [Vec<T>; 3])> {
    let n = target.len();
    if mask.len() != n || preds.iter().any(|p| p.len() != n) {
        return Err(Error::Shape("predictions, target and mask differ in length".into()));
    }
    let losses = cfg.head_losses::<T>()?;
    let weights = cfg.weights();
    let s = T::lit(scale);
    let mut grads = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        count += 1;
        for h in 0..3 {
            if weights[h] == 0.0 {
                continue;
            }
            let r = s * (target[i] - preds[h][i]);
            let w = T::lit(weights[h]);
            sum += weights[h] * losses[h].value(r).as_f64();
            grads[h][i] = -w * s * losses[h].derivative(r);
        }
    }
    Ok((sum, count, grads))
}
