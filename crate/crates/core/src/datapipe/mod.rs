//! Scene preprocessing: resampling, compositing, masking, normalization and splitting.

mod composite;
pub mod dataset;
mod masks;
mod normalize;
pub mod preprocess;
mod regrid;
mod split;

pub use composite::{monthly_composite, MonthKey};
pub use dataset::{Dataset, DatasetManifest, Sample, SampleEntry};
pub use masks::{cloud_mask, combine_masks, outlier_mask, qa_bits, CloudMaskConfig, Confidence, OutlierCut, QaMetadata};
pub use normalize::{fit_target_range, BandRange, BandStats};
pub use preprocess::{preprocess, PreprocessConfig};
pub use regrid::{regrid, regrid_stack};
pub use split::{split_dataset, split_indices};
