//! Simplified natural-scene-statistics quality score.
//!
//! Computes mean-subtracted contrast-normalized (MSCN) luminance
//! coefficients, fits a generalized Gaussian to them and an asymmetric
//! generalized Gaussian to horizontal neighbour products, and measures the
//! distance of those five parameters from fixed pristine-image values. This
//! is a stand-in for a trained BRISQUE/NIQE model, not a replacement.

use std::sync::OnceLock;

use statrs::function::gamma::gamma;

use crate::imaging::PixelImage;

pub const MIN_SIDE: usize = 16;

/// Stabilizer in the MSCN denominator, one 8-bit code value.
const MSCN_C: f64 = 1.0 / 255.0;

/// Reference feature vector: (GGD shape, GGD variance, product AGGD shape,
/// left variance, right variance).
pub const PRISTINE_FEATURES: [f64; 5] = [2.0, 0.4, 0.8, 0.08, 0.15];

/// Squared bandwidth of the feature-distance kernel.
pub const FEATURE_BANDWIDTH: f64 = 1.0;

const SHAPE_MIN: f64 = 0.2;
const SHAPE_STEP: f64 = 0.001;
const SHAPE_STEPS: usize = 9801;

/// (shape, Γ(1/a)Γ(3/a)/Γ(2/a)²) over the search grid.
fn shape_table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..SHAPE_STEPS)
            .map(|i| {
                let a = SHAPE_MIN + i as f64 * SHAPE_STEP;
                (a, gamma(1.0 / a) * gamma(3.0 / a) / gamma(2.0 / a).powi(2))
            })
            .collect()
    })
}

fn closest_shape(target_ratio: f64) -> f64 {
    shape_table()
        .iter()
        .min_by(|a, b| (a.1 - target_ratio).abs().total_cmp(&(b.1 - target_ratio).abs()))
        .map(|&(a, _)| a)
        .unwrap_or(SHAPE_MIN)
}

const DEGENERATE_SHAPE: f64 = 10.0;

/// Moment-matching GGD fit: returns (shape, variance).
pub fn fit_ggd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let var = x.iter().map(|v| v * v).sum::<f64>() / n;
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    if var < 1e-12 || mean_abs < 1e-12 {
        return (DEGENERATE_SHAPE, var);
    }
    (closest_shape(var / (mean_abs * mean_abs)), var)
}

/// AGGD fit: returns (shape, left variance, right variance).
pub fn fit_aggd(x: &[f64]) -> (f64, f64, f64) {
    let side_var = |pred: fn(f64) -> bool| {
        let vals: Vec<f64> = x.iter().copied().filter(|&v| pred(v)).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64
        }
    };
    let left = side_var(|v| v < 0.0);
    let right = side_var(|v| v > 0.0);
    let n = x.len() as f64;
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    if left < 1e-12 || right < 1e-12 || mean_sq < 1e-12 {
        return (DEGENERATE_SHAPE, left, right);
    }
    let g = left.sqrt() / right.sqrt();
    let r_hat = mean_abs * mean_abs / mean_sq;
    let r_norm = r_hat * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    // Table stores the reciprocal of the ratio used here.
    (closest_shape(1.0 / r_norm), left, right)
}

fn gaussian_window() -> [f64; 7] {
    let sigma = 7.0 / 6.0;
    let mut w = [0.0; 7];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - 3.0;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

fn separable_blur(plane: &[f64], width: usize, height: usize) -> Vec<f64> {
    let w = gaussian_window();
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let xx = (x as isize + k as isize - 3).clamp(0, width as isize - 1) as usize;
                acc += wk * plane[y * width + xx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let yy = (y as isize + k as isize - 3).clamp(0, height as isize - 1) as usize;
                acc += wk * tmp[yy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

pub fn mscn(luma: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mu = separable_blur(luma, width, height);
    let sq: Vec<f64> = luma.iter().map(|v| v * v).collect();
    let mu_sq = separable_blur(&sq, width, height);
    luma.iter()
        .zip(&mu)
        .zip(&mu_sq)
        .map(|((&l, &m), &m2)| (l - m) / ((m2 - m * m).abs().sqrt() + MSCN_C))
        .collect()
}

/// Five-parameter feature vector; `None` when the image is below
/// [`MIN_SIDE`] on either side.
pub fn nss_features(image: &PixelImage) -> Option<[f64; 5]> {
    let (w, h) = (image.width(), image.height());
    if w < MIN_SIDE || h < MIN_SIDE {
        return None;
    }
    let coeffs = mscn(&image.luminance(), w, h);
    let (shape, var) = fit_ggd(&coeffs);
    let mut products = Vec::with_capacity((w - 1) * h);
    for y in 0..h {
        for x in 0..w - 1 {
            products.push(coeffs[y * w + x] * coeffs[y * w + x + 1]);
        }
    }
    let (pshape, left, right) = fit_aggd(&products);
    Some([shape, var, pshape, left, right])
}

pub fn nss_score(features: &[f64; 5]) -> f64 {
    let d2: f64 = features
        .iter()
        .zip(PRISTINE_FEATURES)
        .map(|(f, r)| (f - r).powi(2))
        .sum();
    (-d2 / FEATURE_BANDWIDTH).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn gaussian_samples_fit_shape_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0, 0.5).unwrap();
        let x: Vec<f64> = (0..200_000).map(|_| normal.sample(&mut rng)).collect();
        let (shape, var) = fit_ggd(&x);
        assert!((shape - 2.0).abs() < 0.05, "shape {shape}");
        assert!((var - 0.25).abs() < 0.01);
    }

    #[test]
    fn laplacian_samples_fit_shape_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let exp = rand_distr::Exp::new(1.0).unwrap();
        let x: Vec<f64> = (0..200_000)
            .enumerate()
            .map(|(i, _)| {
                let v: f64 = exp.sample(&mut rng);
                if i % 2 == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let (shape, _) = fit_ggd(&x);
        assert!((shape - 1.0).abs() < 0.05, "shape {shape}");
        let (ashape, l, r) = fit_aggd(&x);
        assert!((ashape - 1.0).abs() < 0.05);
        assert!((l - r).abs() < 0.1);
    }

    #[test]
    fn small_images_have_no_features() {
        assert!(nss_features(&PixelImage::constant(15, 40, [0.5; 3])).is_none());
        assert!(nss_features(&PixelImage::constant(16, 16, [0.5; 3])).is_some());
    }

    #[test]
    fn flat_images_score_near_zero() {
        let f = nss_features(&PixelImage::constant(20, 20, [0.5; 3])).unwrap();
        assert!(nss_score(&f) < 1e-6);
    }
}
