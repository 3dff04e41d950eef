use serde::{Deserialize, Serialize};

use crate::datapipe::{BandRange, BandStats};
use crate::error::Result;
use crate::model::{Mode, UNet};
use crate::raster::{BandStack, MaskRaster, QuantileTriple};
use crate::scalar::Scalar;

/// Input and target scaling used in training, stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub bands: Option<BandStats>,
    pub target: BandRange,
}

/// Quantile maps in target units with the validity of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub triple: QuantileTriple<T>,
    pub mask: MaskRaster,
}

/// Inference on a normalized stack; outputs are mapped back to target units.
pub fn predict<T: Scalar>(model: &UNet<T>, stack: &BandStack<T>, target: &BandRange) -> Result<Prediction<T>> {
    let out = model.forward_stack(stack, Mode::Inference)?;
    let (lo, range) = (target.min, target.range());
    let triple = out.map(|v| T::lit(lo + range * v.as_f64()));
    Ok(Prediction { triple, mask: stack.mask() })
}

/// Normalizes a raw stack with the stored band statistics, then predicts.
pub fn predict_raw<T: Scalar>(model: &UNet<T>, raw: &BandStack<T>, norm: &Normalization) -> Result<Prediction<T>> {
    match &norm.bands {
        Some(stats) => predict(model, &stats.normalize(raw)?, &norm.target),
        None => predict(model, raw, &norm.target),
    }
}
