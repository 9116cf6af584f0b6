//! Global image statistics shared by the heuristic perceiver and the
//! built-in scorers.

use serde::{Deserialize, Serialize};

use crate::imaging::PixelImage;

/// Luminance below this counts as "dark".
pub const DARK_LUMINANCE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageStatistics {
    pub mean_luminance: f64,
    pub rms_contrast: f64,
    pub mean_saturation: f64,
    pub colorfulness: f64,
    /// Variance of the 3x3 Laplacian response on luminance.
    pub sharpness: f64,
    pub dark_fraction: f64,
    pub mean_rgb: [f64; 3],
}

pub fn compute_statistics(image: &PixelImage) -> ImageStatistics {
    let lum = image.luminance();
    let n = lum.len() as f64;
    let mean_luminance = lum.iter().sum::<f64>() / n;
    let rms_contrast = population_std(&lum, mean_luminance);
    let dark_fraction = lum.iter().filter(|&&l| l < DARK_LUMINANCE).count() as f64 / n;
    let mean_saturation = (0..image.len())
        .map(|i| {
            let p = [
                image.plane(0)[i] as f64,
                image.plane(1)[i] as f64,
                image.plane(2)[i] as f64,
            ];
            hsv_saturation(p)
        })
        .sum::<f64>()
        / n;
    ImageStatistics {
        mean_luminance,
        rms_contrast,
        mean_saturation,
        colorfulness: colorfulness(image),
        sharpness: laplacian_variance(&lum, image.width(), image.height()),
        dark_fraction,
        mean_rgb: image.mean_rgb(),
    }
}

fn population_std(values: &[f64], mean: f64) -> f64 {
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

fn hsv_saturation(p: [f64; 3]) -> f64 {
    let max = p[0].max(p[1]).max(p[2]);
    let min = p[0].min(p[1]).min(p[2]);
    if max <= 0.0 {
        0.0
    } else {
        (max - min) / max
    }
}

/// Hasler–Süsstrunk opponent-channel colorfulness on `[0, 1]` samples.
pub fn colorfulness(image: &PixelImage) -> f64 {
    let n = image.len() as f64;
    let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
    let rg: Vec<f64> = r.iter().zip(g).map(|(&r, &g)| r as f64 - g as f64).collect();
    let yb: Vec<f64> = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| 0.5 * (r as f64 + g as f64) - b as f64)
        .collect();
    let mean_rg = rg.iter().sum::<f64>() / n;
    let mean_yb = yb.iter().sum::<f64>() / n;
    let std_rg = population_std(&rg, mean_rg);
    let std_yb = population_std(&yb, mean_yb);
    (std_rg.powi(2) + std_yb.powi(2)).sqrt() + 0.3 * (mean_rg.powi(2) + mean_yb.powi(2)).sqrt()
}

/// Variance of the 4-neighbour Laplacian with edge replication.
pub fn laplacian_variance(plane: &[f64], width: usize, height: usize) -> f64 {
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, width as isize - 1) as usize;
        let y = y.clamp(0, height as isize - 1) as usize;
        plane[y * width + x]
    };
    let mut resp = Vec::with_capacity(plane.len());
    for y in 0..height as isize {
        for x in 0..width as isize {
            resp.push(at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y));
        }
    }
    let mean = resp.iter().sum::<f64>() / resp.len() as f64;
    resp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / resp.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_variation() {
        let s = compute_statistics(&PixelImage::constant(6, 5, [0.3, 0.3, 0.3]));
        assert_eq!(s.rms_contrast, 0.0);
        assert_eq!(s.sharpness, 0.0);
        assert_eq!(s.colorfulness, 0.0);
        assert!((s.mean_luminance - 0.3).abs() < 1e-6);
    }

    #[test]
    fn white_has_unit_luminance() {
        let s = compute_statistics(&PixelImage::constant(2, 2, [1.0; 3]));
        assert!((s.mean_luminance - 1.0).abs() < 1e-12);
        assert_eq!(s.dark_fraction, 0.0);
    }

    #[test]
    fn two_level_contrast_is_half() {
        let img = PixelImage::from_fn(2, 2, |_, y| [y as f64; 3]);
        let s = compute_statistics(&img);
        assert!((s.rms_contrast - 0.5).abs() < 1e-12);
    }

    #[test]
    fn black_is_all_dark() {
        let s = compute_statistics(&PixelImage::constant(3, 3, [0.0; 3]));
        assert_eq!(s.dark_fraction, 1.0);
        assert_eq!(s.mean_saturation, 0.0);
    }

    #[test]
    fn colorfulness_of_pure_red() {
        // rg = 1, yb = 0.5, zero spread
        let c = colorfulness(&PixelImage::constant(2, 2, [1.0, 0.0, 0.0]));
        assert!((c - 0.3 * (1.25f64).sqrt()).abs() < 1e-12);
    }
}
