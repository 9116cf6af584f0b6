use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{PerceiveError, Perceiver, PerceiverContext, Scene, MEMORY_WINDOW};
use crate::action::{Category, EditAction, Origin, ProceduralParams};
use crate::executor::Operator;
use crate::imaging::{ImageState, PixelImage};
use crate::stats::{compute_statistics, ImageStatistics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub luminance_low: f64,
    pub luminance_high: f64,
    pub contrast_floor: f64,
    pub contrast_ceiling: f64,
    pub saturation_low: f64,
    pub saturation_high: f64,
    pub sharpness_floor: f64,
    /// Largest per-channel deviation from the gray mean tolerated before a
    /// white-balance correction is proposed.
    pub color_cast: f64,
    pub shadow_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            luminance_low: 0.35,
            luminance_high: 0.65,
            contrast_floor: 0.12,
            contrast_ceiling: 0.3,
            saturation_low: 0.15,
            saturation_high: 0.6,
            sharpness_floor: 0.002,
            color_cast: 0.06,
            shadow_fraction: 0.25,
        }
    }
}

/// Deterministic rule-table perceiver.
#[derive(Clone, Debug, Default)]
pub struct HeuristicPerceiver {
    pub thresholds: Thresholds,
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn proc(id: &str, cat: Category, text: &str, params: ProceduralParams) -> EditAction {
    EditAction::procedural(id, cat, text, params)
}

/// Scene from global statistics plus a skin-tone and center/border pass.
pub fn classify_statistics(image: &PixelImage, s: &ImageStatistics) -> Scene {
    if s.dark_fraction > 0.5 {
        return Scene::Night;
    }
    let [r, g, b] = s.mean_rgb;
    if skin_fraction(image) > 0.25 {
        return Scene::Portrait;
    }
    let low_edges = s.sharpness < 0.05;
    if s.mean_saturation > 0.2 && low_edges && g > r + 0.03 && g > b + 0.03 {
        return Scene::Landscape;
    }
    if s.mean_saturation > 0.2 && low_edges && b > r + 0.05 && b > g {
        return Scene::Landscape;
    }
    if s.mean_saturation > 0.3 && r > g && g > b && r - b > 0.15 {
        return Scene::Food;
    }
    if s.sharpness >= 0.05 && s.mean_saturation < 0.2 {
        return Scene::Urban;
    }
    if center_border_contrast(image) > 0.2 {
        return Scene::Object;
    }
    Scene::Unknown
}

fn is_skin([r, g, b]: [f64; 3]) -> bool {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    r > 0.37 && g > 0.16 && b > 0.08 && max - min > 0.06 && (r - g).abs() > 0.06 && r > g && r > b
}

fn skin_fraction(image: &PixelImage) -> f64 {
    let mut n = 0usize;
    for y in 0..image.height() {
        for x in 0..image.width() {
            if is_skin(image.pixel(x, y)) {
                n += 1;
            }
        }
    }
    n as f64 / image.len() as f64
}

/// |mean luminance of the central half-area box - mean of the rest|.
fn center_border_contrast(image: &PixelImage) -> f64 {
    let (w, h) = (image.width(), image.height());
    if w < 4 || h < 4 {
        return 0.0;
    }
    let lum = image.luminance();
    let (x0, x1, y0, y1) = (w / 4, w - w / 4, h / 4, h - h / 4);
    let (mut cs, mut cn, mut bs, mut bn) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let v = lum[y * w + x];
            if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                cs += v;
                cn += 1;
            } else {
                bs += v;
                bn += 1;
            }
        }
    }
    if cn == 0 || bn == 0 {
        return 0.0;
    }
    (cs / cn as f64 - bs / bn as f64).abs()
}

impl HeuristicPerceiver {
    fn prompt_actions(prompt: &str) -> Vec<EditAction> {
        use Operator::*;
        let text = prompt.to_lowercase();
        let has = |words: &[&str]| words.iter().any(|w| text.contains(w));
        let mut out = Vec::new();
        if has(&["warm", "cozy", "cosy", "golden", "sunset", "autumn"]) {
            out.push(proc(
                "prompt_warm",
                Category::ColorBalance,
                "Shift the color temperature warmer",
                ProceduralParams::new(WhiteBalance).with("r_gain", 1.12).with("b_gain", 0.88),
            ));
        }
        if has(&["cool", "cold", "winter", "calm", "serene"]) {
            out.push(proc(
                "prompt_cool",
                Category::ColorBalance,
                "Shift the color temperature cooler",
                ProceduralParams::new(WhiteBalance).with("r_gain", 0.9).with("b_gain", 1.1),
            ));
        }
        if has(&["bright", "airy", "cheerful", "sunny", "fresh"]) {
            out.push(proc(
                "prompt_bright",
                Category::GlobalTone,
                "Brighten the overall exposure",
                ProceduralParams::new(Brightness).with("delta", 0.08),
            ));
        }
        if has(&["moody", "dramatic", "mysterious", "dark"]) {
            out.push(proc(
                "prompt_moody",
                Category::ContrastAdjust,
                "Deepen contrast for a dramatic mood",
                ProceduralParams::new(Contrast).with("factor", 1.3),
            ));
            out.push(proc(
                "prompt_darken",
                Category::GlobalTone,
                "Lower the exposure slightly",
                ProceduralParams::new(Brightness).with("delta", -0.06),
            ));
        }
        if has(&["vivid", "vibrant", "colorful", "colourful", "punchy"]) {
            out.push(proc(
                "prompt_vivid",
                Category::ColorBalance,
                "Boost color saturation",
                ProceduralParams::new(Saturation).with("factor", 1.35),
            ));
        }
        if has(&["vintage", "faded", "retro", "nostalgic", "film"]) {
            out.push(proc(
                "prompt_faded",
                Category::GlobalTone,
                "Lift the blacks and roll off highlights for a faded look",
                ProceduralParams::new(ToneCurve).with("shadows", 0.08).with("highlights", -0.06),
            ));
        }
        if has(&["soft", "dreamy", "gentle"]) {
            out.push(proc(
                "prompt_soft",
                Category::ContrastAdjust,
                "Soften contrast",
                ProceduralParams::new(Contrast).with("factor", 0.85),
            ));
        }
        if out.is_empty() {
            out.push(EditAction::generative("prompt_semantic", Category::SemanticEdit, prompt.trim()));
        }
        out.into_iter().map(|a| a.with_origin(Origin::UserGuided)).collect()
    }

    fn corrective_actions(&self, s: &ImageStatistics) -> Vec<EditAction> {
        use Operator::*;
        let t = &self.thresholds;
        let mut out = Vec::new();
        if s.mean_luminance < t.luminance_low {
            let delta = round3((0.5 - s.mean_luminance).clamp(0.05, 0.5));
            out.push(proc(
                "brightness_up",
                Category::GlobalTone,
                "Raise exposure to recover the underexposed image",
                ProceduralParams::new(Brightness).with("delta", delta),
            ));
        }
        if s.mean_luminance > t.luminance_high {
            let delta = round3(-(s.mean_luminance - 0.5).clamp(0.05, 0.5));
            out.push(proc(
                "brightness_down",
                Category::GlobalTone,
                "Lower exposure to tame the overexposed image",
                ProceduralParams::new(Brightness).with("delta", delta),
            ));
        }
        if s.rms_contrast < t.contrast_floor {
            let factor = round3((0.2 / s.rms_contrast.max(0.02)).clamp(1.15, 2.0));
            out.push(proc(
                "contrast_up",
                Category::ContrastAdjust,
                "Increase contrast",
                ProceduralParams::new(Contrast).with("factor", factor),
            ));
        }
        if s.rms_contrast > t.contrast_ceiling {
            out.push(proc(
                "contrast_down",
                Category::ContrastAdjust,
                "Reduce harsh contrast",
                ProceduralParams::new(Contrast).with("factor", 0.85),
            ));
        }
        if s.dark_fraction > t.shadow_fraction {
            out.push(proc(
                "shadow_lift",
                Category::GlobalTone,
                "Lift crushed shadows",
                ProceduralParams::new(ToneCurve).with("shadows", 0.12),
            ));
        }
        if s.mean_luminance < t.luminance_low {
            out.push(proc(
                "gamma_lift",
                Category::GlobalTone,
                "Brighten midtones with a gamma curve",
                ProceduralParams::new(Gamma).with("exponent", 0.8),
            ));
        }
        if s.mean_luminance > t.luminance_high {
            out.push(proc(
                "highlight_recover",
                Category::GlobalTone,
                "Recover blown highlights",
                ProceduralParams::new(ToneCurve).with("highlights", -0.12),
            ));
        }
        if s.mean_saturation < t.saturation_low && s.colorfulness > 1e-3 {
            out.push(proc(
                "saturation_up",
                Category::ColorBalance,
                "Increase saturation",
                ProceduralParams::new(Saturation).with("factor", 1.3),
            ));
        }
        if s.mean_saturation > t.saturation_high {
            out.push(proc(
                "saturation_down",
                Category::ColorBalance,
                "Reduce oversaturated colors",
                ProceduralParams::new(Saturation).with("factor", 0.8),
            ));
        }
        let gray = s.mean_rgb.iter().sum::<f64>() / 3.0;
        let cast = s.mean_rgb.iter().map(|c| (c - gray).abs()).fold(0.0, f64::max);
        if cast > t.color_cast && s.mean_rgb.iter().all(|&c| c > 0.02) {
            let gain = |c: f64| round3((gray / c).clamp(0.5, 2.0));
            out.push(proc(
                "neutralize_cast",
                Category::ColorBalance,
                "Neutralize the color cast",
                ProceduralParams::new(WhiteBalance)
                    .with("r_gain", gain(s.mean_rgb[0]))
                    .with("g_gain", gain(s.mean_rgb[1]))
                    .with("b_gain", gain(s.mean_rgb[2])),
            ));
        }
        if s.sharpness < t.sharpness_floor && s.rms_contrast > 0.02 {
            out.push(proc(
                "sharpen",
                Category::LocalRetouch,
                "Sharpen soft details",
                ProceduralParams::new(UnsharpSharpen).with("amount", 0.8),
            ));
        }
        out
    }

    fn scene_actions(scene: Scene) -> Vec<EditAction> {
        match scene {
            Scene::Portrait => vec![EditAction::generative(
                "background_soften",
                Category::BackgroundAlter,
                "Soften and declutter the background while preserving the person's appearance",
            )],
            Scene::Landscape => vec![EditAction::generative(
                "enhance_sky",
                Category::SemanticEdit,
                "Enrich the sky and foliage while keeping the scene natural",
            )],
            Scene::Urban => vec![EditAction::generative(
                "straighten_lines",
                Category::Geometric,
                "Straighten the horizon and correct converging verticals",
            )],
            Scene::Food => vec![
                proc(
                    "food_warmth",
                    Category::ColorBalance,
                    "Warm the white balance so the dish looks appetizing",
                    ProceduralParams::new(Operator::WhiteBalance)
                        .with("r_gain", 1.06)
                        .with("b_gain", 0.94),
                ),
                EditAction::generative(
                    "food_freshen",
                    Category::SemanticEdit,
                    "Make the dish look fresh and appetizing",
                ),
            ],
            Scene::Night => vec![EditAction::generative(
                "night_denoise",
                Category::LocalRetouch,
                "Reduce noise in dark regions and balance light sources",
            )],
            Scene::Object => vec![EditAction::generative(
                "clean_backdrop",
                Category::BackgroundAlter,
                "Clean up the backdrop around the main object",
            )],
            Scene::Unknown => Vec::new(),
        }
    }

    fn filler_actions() -> Vec<EditAction> {
        use Operator::*;
        vec![
            proc(
                "s_curve",
                Category::ContrastAdjust,
                "Apply a gentle S-curve",
                ProceduralParams::new(ToneCurve).with("shadows", -0.04).with("highlights", 0.04),
            ),
            proc(
                "vibrance",
                Category::ColorBalance,
                "Add a touch of vibrance",
                ProceduralParams::new(Saturation).with("factor", 1.15),
            ),
            proc(
                "gentle_sharpen",
                Category::LocalRetouch,
                "Sharpen fine detail slightly",
                ProceduralParams::new(UnsharpSharpen).with("amount", 0.4),
            ),
            proc(
                "gentle_brighten",
                Category::GlobalTone,
                "Brighten slightly",
                ProceduralParams::new(Brightness).with("delta", 0.04),
            ),
            proc(
                "warm_tone",
                Category::ColorBalance,
                "Warm the tones slightly",
                ProceduralParams::new(WhiteBalance).with("r_gain", 1.05).with("b_gain", 0.95),
            ),
            proc(
                "soft_vignette",
                Category::BackgroundAlter,
                "Darken the edges to draw attention inward",
                ProceduralParams::new(Vignette).with("strength", 0.2),
            ),
        ]
    }

    /// Full ordered candidate list before truncation to `k`.
    pub fn candidates(&self, image: &PixelImage, ctx: &PerceiverContext) -> Vec<EditAction> {
        let stats = compute_statistics(image);
        let mut pool = Vec::new();
        if let Some(p) = &ctx.user_prompt {
            pool.extend(Self::prompt_actions(p));
        }
        pool.extend(self.corrective_actions(&stats));
        pool.extend(Self::scene_actions(ctx.scene));
        pool.extend(Self::filler_actions());

        let rejected = ctx.memory.recently_rejected(MEMORY_WINDOW);
        let portrait = ctx.scene == Scene::Portrait;
        let mut seen = BTreeSet::new();
        let mut seen_ids = BTreeSet::new();
        pool.retain(|a| {
            if rejected.contains(a.id.as_str()) {
                return false;
            }
            // Keep the subject intact on portraits; edit the background instead.
            if portrait && matches!(a.category, Category::LocalRetouch | Category::SemanticEdit) {
                return false;
            }
            seen_ids.insert(a.id.clone()) && seen.insert(a.dedup_key())
        });
        pool
    }
}

/// First `k` of `pool`, swapping in another category when `k >= 3` would
/// otherwise yield a single category.
fn select_diverse(mut pool: Vec<EditAction>, k: usize) -> Vec<EditAction> {
    if pool.len() <= k {
        return pool;
    }
    let rest = pool.split_off(k);
    let mut chosen = pool;
    if k >= 3 && chosen.iter().all(|a| a.category == chosen[0].category) {
        if let Some(other) = rest.into_iter().find(|a| a.category != chosen[0].category) {
            chosen[k - 1] = other;
        }
    }
    chosen
}

impl Perceiver for HeuristicPerceiver {
    fn classify_scene(&self, state: &ImageState) -> Scene {
        classify_statistics(&state.image, &compute_statistics(&state.image))
    }

    fn propose(&self, state: &ImageState, ctx: &PerceiverContext) -> Result<Vec<EditAction>, PerceiveError> {
        Ok(select_diverse(self.candidates(&state.image, ctx), ctx.k.max(1)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::ActionPayload;
    use crate::memory::{EditingMemory, TriedAction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(img: PixelImage) -> ImageState {
        ImageState::initial(img)
    }

    fn dark_flat() -> PixelImage {
        PixelImage::from_fn(32, 32, |x, _| [0.12 + 0.002 * x as f64, 0.13 + 0.002 * x as f64, 0.12])
    }

    #[test]
    fn scene_rules() {
        let p = HeuristicPerceiver::default();
        assert_eq!(p.classify_scene(&state(PixelImage::constant(8, 8, [0.0; 3]))), Scene::Night);
        assert_eq!(p.classify_scene(&state(PixelImage::constant(8, 8, [0.5; 3]))), Scene::Unknown);
        let green = PixelImage::from_fn(32, 32, |x, y| {
            [0.15 + 0.002 * x as f64, 0.55 + 0.003 * y as f64, 0.2]
        });
        let s = compute_statistics(&green);
        assert!(s.mean_saturation > 0.2 && s.sharpness < 0.05);
        assert_eq!(p.classify_scene(&state(green)), Scene::Landscape);
    }

    #[test]
    fn dark_low_contrast_gets_brightness_and_contrast() {
        let p = HeuristicPerceiver::default();
        let ctx = PerceiverContext::new(Scene::Unknown, 3);
        let actions = p.propose(&state(dark_flat()), &ctx).unwrap();
        assert_eq!(actions.len(), 3);
        let ids: Vec<&str> = actions.iter().map(|a| a.id.as_str()).collect();
        assert!(ids.contains(&"brightness_up"), "{ids:?}");
        assert!(ids.contains(&"contrast_up"), "{ids:?}");
    }

    #[test]
    fn brightness_scales_with_deficit() {
        let p = HeuristicPerceiver::default();
        let ctx = PerceiverContext::new(Scene::Unknown, 10);
        let delta = |img: PixelImage| {
            let a = p.propose(&state(img), &ctx).unwrap();
            let b = a.into_iter().find(|a| a.id == "brightness_up").unwrap();
            match b.payload {
                ActionPayload::Procedural(pp) => pp.params["delta"],
                _ => unreachable!(),
            }
        };
        assert!(delta(PixelImage::constant(4, 4, [0.1; 3])) > delta(PixelImage::constant(4, 4, [0.3; 3])));
    }

    #[test]
    fn rejected_actions_are_excluded() {
        let p = HeuristicPerceiver::default();
        let mut memory = EditingMemory::new(0.2);
        memory.record(
            1,
            vec![TriedAction {
                action_id: "brightness_up".into(),
                accepted: false,
                score_delta: -0.05,
                executed: true,
            }],
            None,
        );
        let ctx = PerceiverContext::new(Scene::Unknown, 10).with_memory(memory);
        let actions = p.propose(&state(dark_flat()), &ctx).unwrap();
        assert!(actions.iter().all(|a| a.id != "brightness_up"));
    }

    #[test]
    fn warm_prompt_routes_to_color_balance() {
        let p = HeuristicPerceiver::default();
        let ctx = PerceiverContext::new(Scene::Unknown, 3).with_prompt(Some("make it feel warmer".into()));
        let actions = p.propose(&state(dark_flat()), &ctx).unwrap();
        let warm = actions
            .iter()
            .find(|a| a.category == Category::ColorBalance && a.origin == Origin::UserGuided)
            .expect("warm action");
        match &warm.payload {
            ActionPayload::Procedural(pp) => {
                assert_eq!(pp.operator, Operator::WhiteBalance);
                assert!(pp.params["r_gain"] > 1.0 && pp.params["b_gain"] < 1.0);
            }
            other => panic!("unexpected payload {other:?}"),
        }
    }

    #[test]
    fn unknown_prompt_becomes_semantic_instruction() {
        let p = HeuristicPerceiver::default();
        let ctx = PerceiverContext::new(Scene::Unknown, 2).with_prompt(Some("add a rainbow".into()));
        let actions = p.propose(&state(PixelImage::constant(4, 4, [0.5; 3])), &ctx).unwrap();
        assert_eq!(actions[0].category, Category::SemanticEdit);
        assert_eq!(actions[0].instruction, "add a rainbow");
    }

    #[test]
    fn portrait_suppresses_subject_edits() {
        let p = HeuristicPerceiver::default();
        let ctx = PerceiverContext::new(Scene::Portrait, 20);
        let actions = p.propose(&state(dark_flat()), &ctx).unwrap();
        assert!(actions
            .iter()
            .all(|a| !matches!(a.category, Category::LocalRetouch | Category::SemanticEdit)));
        assert!(actions.iter().any(|a| a.category == Category::BackgroundAlter));
    }

    #[test]
    fn proposals_are_valid_distinct_and_deterministic() {
        let p = HeuristicPerceiver::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..30u64 {
            let base: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            let img = PixelImage::from_fn(24, 24, |_, _| {
                [
                    base[0] * 0.7 + 0.3 * r2.random::<f64>(),
                    base[1] * 0.7 + 0.3 * r2.random::<f64>(),
                    base[2] * 0.7 + 0.3 * r2.random::<f64>(),
                ]
            });
            let st = state(img);
            let scene = p.classify_scene(&st);
            let ctx = PerceiverContext::new(scene, 5);
            let a = p.propose(&st, &ctx).unwrap();
            let b = p.propose(&st, &ctx).unwrap();
            assert_eq!(a, b);
            assert!(a.len() <= 5);
            let keys: BTreeSet<_> = a.iter().map(|x| x.dedup_key()).collect();
            assert_eq!(keys.len(), a.len());
            assert!(a.iter().all(|x| x.validate().is_ok()));
            let cats: BTreeSet<_> = a.iter().map(|x| x.category).collect();
            assert!(cats.len() >= 2);
        }
    }
}
