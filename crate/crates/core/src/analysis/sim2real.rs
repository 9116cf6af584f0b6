use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::rank::{kendall_tau, retained, spearman};
use crate::action::ProceduralParams;
use crate::evaluator::ImageEvaluator;
use crate::executor::{apply_procedural, Operator};
use crate::imaging::{downscale, PixelImage, Scale};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankConsistencyReport {
    pub scale: Scale,
    pub spearman: f64,
    pub kendall_tau: f64,
    pub top1_retention: f64,
    pub top3_retention: f64,
    /// Images that contributed.
    pub n: usize,
    pub candidates_per_image: usize,
    /// Images dropped because scoring failed, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Procedural test images with varied exposure, color and texture.
pub fn synthetic_images(count: usize, width: usize, height: usize, seed: u64) -> Vec<PixelImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base: [f64; 3] = [rng.random_range(0.05..0.8), rng.random_range(0.05..0.8), rng.random_range(0.05..0.8)];
            let tint: [f64; 3] = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            let freq = rng.random_range(1.0..6.0);
            let texture = rng.random_range(0.0..0.25);
            let (cx, cy, rad) = (rng.random::<f64>(), rng.random::<f64>(), rng.random_range(0.1..0.4));
            let blob: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let noise_seed: u64 = rng.random();
            let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
            PixelImage::from_fn(width, height, |x, y| {
                let u = x as f64 / width as f64;
                let v = y as f64 / height as f64;
                let wave = (freq * std::f64::consts::TAU * (u + 0.5 * v)).sin();
                let n: f64 = noise.random_range(-0.03..0.03);
                let inside = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt() < rad;
                std::array::from_fn(|c| {
                    let g = base[c] + tint[c] * v + texture * wave + n;
                    if inside {
                        0.5 * g + 0.5 * blob[c]
                    } else {
                        g
                    }
                })
            })
        })
        .collect()
}

/// `count` random procedural edits of moderate strength. Crop is excluded so
/// both resolutions see the same content.
pub fn random_candidates(count: usize, rng: &mut impl Rng) -> Vec<ProceduralParams> {
    (0..count)
        .map(|_| match rng.random_range(0..8) {
            0 => ProceduralParams::new(Operator::Brightness).with("delta", rng.random_range(-0.3..0.3)),
            1 => ProceduralParams::new(Operator::Contrast).with("factor", rng.random_range(0.5..2.0)),
            2 => ProceduralParams::new(Operator::Saturation).with("factor", rng.random_range(0.0..2.0)),
            3 => ProceduralParams::new(Operator::Gamma).with("exponent", rng.random_range(0.5..2.0)),
            4 => ProceduralParams::new(Operator::WhiteBalance)
                .with("r_gain", rng.random_range(0.7..1.4))
                .with("b_gain", rng.random_range(0.7..1.4)),
            5 => ProceduralParams::new(Operator::ToneCurve)
                .with("shadows", rng.random_range(-0.3..0.3))
                .with("highlights", rng.random_range(-0.3..0.3)),
            6 => ProceduralParams::new(Operator::Vignette).with("strength", rng.random_range(0.0..0.8)),
            _ => ProceduralParams::new(Operator::UnsharpSharpen).with("amount", rng.random_range(0.0..2.0)),
        })
        .collect()
}

/// Scores every candidate edit at full resolution and on a copy downscaled
/// before editing, then reports mean per-image rank agreement.
pub fn sim2real_experiment(
    images: &[PixelImage],
    actions_per_image: usize,
    scale: Scale,
    evaluator: &dyn ImageEvaluator,
    seed: u64,
) -> RankConsistencyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rho, mut tau, mut top1, mut top3) = (0.0, 0.0, 0.0, 0.0);
    let mut n = 0usize;
    let mut skipped = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let candidates = random_candidates(actions_per_image, &mut rng);
        let small = downscale(img, scale);
        let trial = || -> Result<(Vec<f64>, Vec<f64>), String> {
            let mut full = Vec::with_capacity(candidates.len());
            let mut low = Vec::with_capacity(candidates.len());
            for p in &candidates {
                let a = apply_procedural(p, img).map_err(|e| e.to_string())?;
                let b = apply_procedural(p, &small).map_err(|e| e.to_string())?;
                full.push(evaluator.evaluate(&a).map_err(|e| e.to_string())?.aggregate);
                low.push(evaluator.evaluate(&b).map_err(|e| e.to_string())?.aggregate);
            }
            Ok((full, low))
        };
        match trial().and_then(|(full, low)| {
            Ok((
                spearman(&low, &full).map_err(|e| e.to_string())?,
                kendall_tau(&low, &full).map_err(|e| e.to_string())?,
                retained(&low, &full, 1).map_err(|e| e.to_string())?,
                retained(&low, &full, 3.min(full.len())).map_err(|e| e.to_string())?,
            ))
        }) {
            Ok((r, t, k1, k3)) => {
                rho += r;
                tau += t;
                top1 += k1 as u8 as f64;
                top3 += k3 as u8 as f64;
                n += 1;
            }
            Err(e) => skipped.push((i, e)),
        }
    }
    let d = n.max(1) as f64;
    RankConsistencyReport {
        scale,
        spearman: rho / d,
        kendall_tau: tau / d,
        top1_retention: top1 / d,
        top3_retention: top3 / d,
        n,
        candidates_per_image: actions_per_image,
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{BuiltinMetric, Evaluator, ScorerConfig, ScorerEntry};

    #[test]
    fn full_scale_is_a_perfect_control() {
        let imgs = synthetic_images(4, 48, 32, 1);
        let r = sim2real_experiment(&imgs, 6, Scale::Full, &Evaluator::builtin_default(), 2);
        assert_eq!((r.spearman, r.kendall_tau, r.top1_retention, r.top3_retention), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.n, 4);
    }

    #[test]
    fn brightness_variants_rank_identically_under_exposure() {
        let cfg = ScorerConfig {
            entries: vec![ScorerEntry::builtin("exposure", 1.0, BuiltinMetric::Exposure)],
        };
        let ev = Evaluator::from_config(&cfg, &Default::default()).unwrap();
        let img = PixelImage::constant(40, 40, [0.2, 0.25, 0.3]);
        let deltas = [-0.15, -0.05, 0.05, 0.12, 0.2, 0.28];
        let mut full = Vec::new();
        let mut low = Vec::new();
        for d in deltas {
            let p = ProceduralParams::new(Operator::Brightness).with("delta", d);
            full.push(ev.evaluate(&apply_procedural(&p, &img).unwrap()).unwrap().aggregate);
            low.push(ev.evaluate(&apply_procedural(&p, &downscale(&img, Scale::Quarter)).unwrap()).unwrap().aggregate);
        }
        assert_eq!(spearman(&low, &full).unwrap(), 1.0);
    }
}
