//! Deterministic procedural operators.
//!
//! Every operator reads `f32` samples, computes in `f64` and clamps into
//! `[0, 1]` on write. Identity parameters reproduce the input bit-for-bit.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::action::{ActionError, ProceduralParams};
use crate::imaging::{luminance, PixelImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Brightness,
    Contrast,
    Saturation,
    WhiteBalance,
    Gamma,
    ToneCurve,
    Vignette,
    UnsharpSharpen,
    HueShift,
    Crop,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub min: f64,
    pub max: f64,
    pub default: f64,
}

const fn param(name: &'static str, min: f64, max: f64, default: f64) -> ParamSpec {
    ParamSpec {
        name,
        min,
        max,
        default,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorSpec {
    pub name: &'static str,
    pub parameters: Vec<ParamSpec>,
}

impl OperatorSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn check(&self, params: &BTreeMap<String, f64>) -> Result<(), ActionError> {
        for (name, &value) in params {
            let spec = self.param(name).ok_or_else(|| ActionError::UnknownParam {
                operator: self.name.to_string(),
                param: name.clone(),
            })?;
            if !value.is_finite() || value < spec.min || value > spec.max {
                return Err(ActionError::ParamOutOfRange {
                    operator: self.name.to_string(),
                    param: name.clone(),
                    value,
                    min: spec.min,
                    max: spec.max,
                });
            }
        }
        if self.name == "crop" {
            let get = |n: &str| params.get(n).copied().unwrap_or_else(|| self.param(n).unwrap().default);
            if get("left") >= get("right") || get("top") >= get("bottom") {
                return Err(ActionError::InvalidParams {
                    operator: "crop".into(),
                    reason: "rectangle must satisfy left < right and top < bottom".into(),
                });
            }
        }
        Ok(())
    }

    /// Parameter value with the declared default filled in.
    fn value(&self, params: &BTreeMap<String, f64>, name: &str) -> f64 {
        params
            .get(name)
            .copied()
            .unwrap_or_else(|| self.param(name).map(|p| p.default).unwrap_or(0.0))
    }
}

impl Operator {
    pub const ALL: [Operator; 10] = [
        Operator::Brightness,
        Operator::Contrast,
        Operator::Saturation,
        Operator::WhiteBalance,
        Operator::Gamma,
        Operator::ToneCurve,
        Operator::Vignette,
        Operator::UnsharpSharpen,
        Operator::HueShift,
        Operator::Crop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Brightness => "brightness",
            Operator::Contrast => "contrast",
            Operator::Saturation => "saturation",
            Operator::WhiteBalance => "white_balance",
            Operator::Gamma => "gamma",
            Operator::ToneCurve => "tone_curve",
            Operator::Vignette => "vignette",
            Operator::UnsharpSharpen => "unsharp_sharpen",
            Operator::HueShift => "hue_shift",
            Operator::Crop => "crop",
        }
    }

    pub fn spec(self) -> OperatorSpec {
        let parameters = match self {
            Operator::Brightness => vec![param("delta", -0.5, 0.5, 0.0)],
            Operator::Contrast => vec![param("factor", 0.25, 4.0, 1.0)],
            Operator::Saturation => vec![param("factor", 0.0, 3.0, 1.0)],
            Operator::WhiteBalance => vec![
                param("r_gain", 0.5, 2.0, 1.0),
                param("g_gain", 0.5, 2.0, 1.0),
                param("b_gain", 0.5, 2.0, 1.0),
            ],
            Operator::Gamma => vec![param("exponent", 0.25, 4.0, 1.0)],
            Operator::ToneCurve => vec![
                param("shadows", -0.5, 0.5, 0.0),
                param("highlights", -0.5, 0.5, 0.0),
            ],
            Operator::Vignette => vec![param("strength", 0.0, 1.0, 0.0)],
            Operator::UnsharpSharpen => vec![param("amount", 0.0, 2.0, 0.0)],
            Operator::HueShift => vec![param("degrees", -180.0, 180.0, 0.0)],
            Operator::Crop => vec![
                param("left", 0.0, 1.0, 0.0),
                param("top", 0.0, 1.0, 0.0),
                param("right", 0.0, 1.0, 1.0),
                param("bottom", 0.0, 1.0, 1.0),
            ],
        };
        OperatorSpec {
            name: self.name(),
            parameters,
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operator {
    type Err = ActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Operator::ALL
            .into_iter()
            .find(|op| op.name() == key || (key == "sharpen" && *op == Operator::UnsharpSharpen))
            .ok_or_else(|| ActionError::UnknownOperator(s.to_string()))
    }
}

/// Applies a validated procedural edit.
pub fn apply_procedural(params: &ProceduralParams, image: &PixelImage) -> Result<PixelImage, ActionError> {
    let spec = params.operator.spec();
    spec.check(&params.params)?;
    let v = |name: &str| spec.value(&params.params, name);
    let out = match params.operator {
        Operator::Brightness => {
            let d = v("delta");
            image.map_pixels(|_, _, p| p.map(|c| c + d))
        }
        Operator::Contrast => {
            let f = v("factor");
            image.map_pixels(|_, _, p| p.map(|c| 0.5 + f * (c - 0.5)))
        }
        Operator::Saturation => {
            let f = v("factor");
            image.map_pixels(|_, _, p| {
                let l = luminance(p[0], p[1], p[2]);
                p.map(|c| l + f * (c - l))
            })
        }
        Operator::WhiteBalance => {
            let gains = [v("r_gain"), v("g_gain"), v("b_gain")];
            image.map_pixels(|_, _, p| [p[0] * gains[0], p[1] * gains[1], p[2] * gains[2]])
        }
        Operator::Gamma => {
            let e = v("exponent");
            image.map_pixels(|_, _, p| p.map(|c| c.powf(e)))
        }
        Operator::ToneCurve => {
            let (s, h) = (v("shadows"), v("highlights"));
            image.map_pixels(|_, _, p| p.map(|c| tone_curve(c, s, h)))
        }
        Operator::Vignette => vignette(image, v("strength")),
        Operator::UnsharpSharpen => unsharp(image, v("amount")),
        Operator::HueShift => {
            let deg = v("degrees");
            if deg == 0.0 {
                image.clone()
            } else {
                image.map_pixels(|_, _, p| hue_rotate(p, deg))
            }
        }
        Operator::Crop => crop(image, v("left"), v("top"), v("right"), v("bottom")),
    };
    Ok(out)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Shadow lift weighted by `1 - smoothstep(0, 0.5, c)`, highlight lift by
/// `smoothstep(0.5, 1, c)`.
pub fn tone_curve(c: f64, shadows: f64, highlights: f64) -> f64 {
    let ws = 1.0 - smoothstep(0.0, 0.5, c);
    let wh = smoothstep(0.5, 1.0, c);
    c + shadows * ws + highlights * wh
}

fn vignette(image: &PixelImage, strength: f64) -> PixelImage {
    let cx = (image.width() as f64 - 1.0) / 2.0;
    let cy = (image.height() as f64 - 1.0) / 2.0;
    let corner2 = cx * cx + cy * cy;
    image.map_pixels(|x, y, p| {
        let r2 = if corner2 > 0.0 {
            ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / corner2
        } else {
            0.0
        };
        let k = 1.0 - strength * r2;
        p.map(|c| c * k)
    })
}

const GAUSS3: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];

/// 3x3 Gaussian blur with edge replication.
pub fn gaussian_blur3(image: &PixelImage) -> PixelImage {
    let (w, h) = (image.width() as isize, image.height() as isize);
    let at = |c: usize, x: isize, y: isize| -> f64 {
        let x = x.clamp(0, w - 1) as usize;
        let y = y.clamp(0, h - 1) as usize;
        image.plane(c)[y * image.width() + x] as f64
    };
    PixelImage::from_fn(image.width(), image.height(), |x, y| {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, row) in GAUSS3.iter().enumerate() {
                for (i, k) in row.iter().enumerate() {
                    acc += k * at(c, x as isize + i as isize - 1, y as isize + j as isize - 1);
                }
            }
            *o = acc / 16.0;
        }
        out
    })
}

fn unsharp(image: &PixelImage, amount: f64) -> PixelImage {
    let blurred = gaussian_blur3(image);
    image.map_pixels(|x, y, p| {
        let b = blurred.pixel(x, y);
        [
            p[0] + amount * (p[0] - b[0]),
            p[1] + amount * (p[1] - b[1]),
            p[2] + amount * (p[2] - b[2]),
        ]
    })
}

fn crop(image: &PixelImage, left: f64, top: f64, right: f64, bottom: f64) -> PixelImage {
    let (w, h) = (image.width(), image.height());
    let x0 = ((left * w as f64).floor() as usize).min(w - 1);
    let y0 = ((top * h as f64).floor() as usize).min(h - 1);
    let x1 = ((right * w as f64).ceil() as usize).clamp(x0 + 1, w);
    let y1 = ((bottom * h as f64).ceil() as usize).clamp(y0 + 1, h);
    PixelImage::from_fn(x1 - x0, y1 - y0, |x, y| image.pixel(x0 + x, y0 + y))
}

pub fn rgb_to_hsl(p: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = p;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let l = (max + min) / 2.0;
    if max == min {
        return [0.0, 0.0, l];
    }
    let d = max - min;
    let s = if l > 0.5 { d / (2.0 - max - min) } else { d / (max + min) };
    let h = if max == r {
        (g - b) / d + if g < b { 6.0 } else { 0.0 }
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    [h * 60.0, s, l]
}

pub fn hsl_to_rgb(hsl: [f64; 3]) -> [f64; 3] {
    let [h, s, l] = hsl;
    if s == 0.0 {
        return [l, l, l];
    }
    let q = if l < 0.5 { l * (1.0 + s) } else { l + s - l * s };
    let p = 2.0 * l - q;
    let hk = h / 360.0;
    let channel = |t: f64| {
        let t = t.rem_euclid(1.0);
        if t < 1.0 / 6.0 {
            p + (q - p) * 6.0 * t
        } else if t < 0.5 {
            q
        } else if t < 2.0 / 3.0 {
            p + (q - p) * (2.0 / 3.0 - t) * 6.0
        } else {
            p
        }
    };
    [channel(hk + 1.0 / 3.0), channel(hk), channel(hk - 1.0 / 3.0)]
}

fn hue_rotate(p: [f64; 3], degrees: f64) -> [f64; 3] {
    let [h, s, l] = rgb_to_hsl(p);
    hsl_to_rgb([(h + degrees).rem_euclid(360.0), s, l])
}
