//! Dataset ingestion, preprocessing and the synthetic generator.

mod dataset;
pub mod pgm;
mod synth;
mod transform;

pub use dataset::{
    apply_normalization, load_samples, luma601, normalize_dataset, split_dataset, DatasetManifest,
    ManifestEntry, STD_FLOOR,
};
pub use pgm::{encode_pgm, load_pgm, parse_pgm, save_pgm};
pub use synth::{gen_synthetic, render_synthetic, SYNTH_CLASSES};
pub use transform::{affine, augment, crop_resize, hflip, resize_bilinear, vflip, AugmentConfig};

use crate::nn::Tensor;

/// One grayscale image with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
    pub source_id: String,
}
