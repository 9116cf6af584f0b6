use serde::{Deserialize, Serialize};

use super::nss::{nss_features, nss_score, MIN_SIDE};
use super::{ScoreError, Scorer};
use crate::imaging::PixelImage;
use crate::stats::{colorfulness, compute_statistics, laplacian_variance};

/// Offline no-reference metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinMetric {
    NssQuality,
    Colorfulness,
    Contrast,
    Sharpness,
    Exposure,
    /// Mean of contrast and exposure.
    Tone,
}

impl BuiltinMetric {
    pub fn name(self) -> &'static str {
        match self {
            BuiltinMetric::NssQuality => "nss_quality",
            BuiltinMetric::Colorfulness => "colorfulness_score",
            BuiltinMetric::Contrast => "contrast_score",
            BuiltinMetric::Sharpness => "sharpness_score",
            BuiltinMetric::Exposure => "exposure_score",
            BuiltinMetric::Tone => "tone_score",
        }
    }
}

impl Scorer for BuiltinMetric {
    fn score(&self, image: &PixelImage) -> Result<f64, ScoreError> {
        Ok(match self {
            BuiltinMetric::NssQuality => return nss_quality(image),
            BuiltinMetric::Colorfulness => colorfulness_score(image),
            BuiltinMetric::Contrast => contrast_score(image),
            BuiltinMetric::Sharpness => sharpness_score(image),
            BuiltinMetric::Exposure => exposure_score(image),
            BuiltinMetric::Tone => tone_score(image),
        })
    }
}

pub fn nss_quality(image: &PixelImage) -> Result<f64, ScoreError> {
    nss_features(image)
        .map(|f| nss_score(&f))
        .ok_or(ScoreError::ImageTooSmall {
            metric: "nss_quality",
            width: image.width(),
            height: image.height(),
            min: MIN_SIDE,
        })
}

pub fn colorfulness_score(image: &PixelImage) -> f64 {
    (colorfulness(image) / 0.3).min(1.0)
}

pub fn contrast_score(image: &PixelImage) -> f64 {
    (compute_statistics(image).rms_contrast / 0.25).min(1.0)
}

pub fn sharpness_score(image: &PixelImage) -> f64 {
    (laplacian_variance(&image.luminance(), image.width(), image.height()) / 0.02).min(1.0)
}

pub fn exposure_score(image: &PixelImage) -> f64 {
    let lum = image.luminance();
    let mean = lum.iter().sum::<f64>() / lum.len() as f64;
    (1.0 - 2.0 * (mean - 0.5).abs()).clamp(0.0, 1.0)
}

pub fn tone_score(image: &PixelImage) -> f64 {
    0.5 * (contrast_score(image) + exposure_score(image))
}
