//! RGB pixel buffers, resolution reduction and content digests.
//!
//! Samples are stored as linear `[0, 1]` reals in three row-major planes.
//! Storage is `f32`; arithmetic that feeds back into a buffer is done in
//! `f64` and rounded once on write.

use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::ScoreReport;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1 (got {width}x{height})")]
    EmptyDimensions { width: usize, height: usize },
    #[error("plane {plane} has {actual} samples, expected {expected}")]
    PlaneLength {
        plane: usize,
        expected: usize,
        actual: usize,
    },
    #[error("sample {value} at plane {plane} index {index} is outside [0, 1]")]
    OutOfRange {
        plane: usize,
        index: usize,
        value: f32,
    },
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("image encode failed: {0}")]
    Encode(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A validated three-plane RGB image with samples in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct PixelImage {
    width: usize,
    height: usize,
    planes: [Vec<f32>; 3],
}

impl std::fmt::Debug for PixelImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PixelImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("digest", &format_args!("{:016x}", content_hash(self)))
            .finish()
    }
}

impl PixelImage {
    pub fn new(width: usize, height: usize, planes: [Vec<f32>; 3]) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        let expected = width * height;
        for (plane, data) in planes.iter().enumerate() {
            if data.len() != expected {
                return Err(ImageError::PlaneLength {
                    plane,
                    expected,
                    actual: data.len(),
                });
            }
            if let Some((index, &value)) = data
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(ImageError::OutOfRange { plane, index, value });
            }
        }
        Ok(Self {
            width,
            height,
            planes,
        })
    }

    /// Builds an image from a per-pixel function. Values are clamped to `[0, 1]`
    /// and NaN maps to 0.
    ///
    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let n = width * height;
        let mut planes = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                for c in 0..3 {
                    planes[c].push(clamp_unit(px[c]) as f32);
                }
            }
        }
        Self {
            width,
            height,
            planes,
        }
    }

    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        &self.planes[channel]
    }

    pub fn planes(&self) -> &[Vec<f32>; 3] {
        &self.planes
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = y * self.width + x;
        [
            self.planes[0][i] as f64,
            self.planes[1][i] as f64,
            self.planes[2][i] as f64,
        ]
    }

    /// Applies `f` to every pixel, clamping results back into range.
    pub fn map_pixels(&self, mut f: impl FnMut(usize, usize, [f64; 3]) -> [f64; 3]) -> Self {
        Self::from_fn(self.width, self.height, |x, y| f(x, y, self.pixel(x, y)))
    }

    /// Rec. 709 luminance of every pixel.
    pub fn luminance(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                luminance(
                    self.planes[0][i] as f64,
                    self.planes[1][i] as f64,
                    self.planes[2][i] as f64,
                )
            })
            .collect()
    }

    pub fn mean_rgb(&self) -> [f64; 3] {
        let n = self.len() as f64;
        let mut out = [0.0; 3];
        for (c, plane) in self.planes.iter().enumerate() {
            out[c] = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
        }
        out
    }

    /// Decodes an 8- or 16-bit encoded image (PNG, JPEG) into `[0, 1]` RGB.
    pub fn decode(bytes: &[u8]) -> Result<Self, ImageError> {
        let decoded = image::load_from_memory(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
        Ok(Self::from_dynamic(&decoded))
    }

    pub fn from_dynamic(decoded: &image::DynamicImage) -> Self {
        use image::DynamicImage;
        match decoded {
            DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_) => {
                let rgb = decoded.to_rgb16();
                let (w, h) = rgb.dimensions();
                Self::from_fn(w as usize, h as usize, |x, y| {
                    let p = rgb.get_pixel(x as u32, y as u32).0;
                    [p[0] as f64 / 65535.0, p[1] as f64 / 65535.0, p[2] as f64 / 65535.0]
                })
            }
            _ => {
                let rgb = decoded.to_rgb8();
                let (w, h) = rgb.dimensions();
                Self::from_fn(w as usize, h as usize, |x, y| {
                    let p = rgb.get_pixel(x as u32, y as u32).0;
                    [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
                })
            }
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = self.pixel(x as usize, y as usize);
            image::Rgb([quantize(px[0]), quantize(px[1]), quantize(px[2])])
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn to_base64_png(&self) -> Result<String, ImageError> {
        Ok(base64::engine::general_purpose::STANDARD.encode(self.encode_png()?))
    }

    pub fn from_base64(data: &str) -> Result<Self, ImageError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(data.trim())
            .map_err(|e| ImageError::Decode(format!("base64: {e}")))?;
        Self::decode(&bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    /// Writes PNG or JPEG depending on the file extension (PNG when unknown).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let format = match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("jpg") | Some("jpeg") => image::ImageFormat::Jpeg,
            _ => image::ImageFormat::Png,
        };
        self.to_rgb8()
            .save_with_format(path, format)
            .map_err(|e| ImageError::Encode(e.to_string()))
    }
}

pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.2126 * r + 0.7152 * g + 0.0722 * b
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn quantize(v: f64) -> u8 {
    (clamp_unit(v) * 255.0).round() as u8
}

/// Resolution used for simulated edits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Full,
    Half,
    Quarter,
}

impl Scale {
    pub fn factor(self) -> usize {
        match self {
            Scale::Full => 1,
            Scale::Half => 2,
            Scale::Quarter => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scale::Full => "1/1",
            Scale::Half => "1/2",
            Scale::Quarter => "1/4",
        }
    }
}

/// Box-filter reduction. Output dimensions are `ceil(dim / factor)`; edge
/// blocks that overhang the source average only the pixels they cover.
pub fn downscale(image: &PixelImage, scale: Scale) -> PixelImage {
    let f = scale.factor();
    if f == 1 {
        return image.clone();
    }
    let (w, h) = (image.width, image.height);
    let (ow, oh) = (w.div_ceil(f), h.div_ceil(f));
    let mut planes = [
        Vec::with_capacity(ow * oh),
        Vec::with_capacity(ow * oh),
        Vec::with_capacity(ow * oh),
    ];
    for oy in 0..oh {
        let ys = oy * f..((oy + 1) * f).min(h);
        for ox in 0..ow {
            let xs = ox * f..((ox + 1) * f).min(w);
            let count = (ys.len() * xs.len()) as f64;
            for (c, plane) in image.planes.iter().enumerate() {
                let mut sum = 0.0f64;
                for y in ys.clone() {
                    let row = &plane[y * w..(y + 1) * w];
                    sum += row[xs.clone()].iter().map(|&v| v as f64).sum::<f64>();
                }
                planes[c].push(clamp_unit(sum / count) as f32);
            }
        }
    }
    PixelImage {
        width: ow,
        height: oh,
        planes,
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a digest over the dimensions and the 8-bit quantized samples.
pub fn content_hash(image: &PixelImage) -> u64 {
    let mut h = FNV_OFFSET;
    let mut feed = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(FNV_PRIME);
    };
    for b in (image.width as u64).to_le_bytes() {
        feed(b);
    }
    for b in (image.height as u64).to_le_bytes() {
        feed(b);
    }
    for i in 0..image.len() {
        for plane in &image.planes {
            feed(quantize(plane[i] as f64));
        }
    }
    h
}

/// An image together with how it was reached.
#[derive(Clone, Debug)]
pub struct ImageState {
    pub image: Arc<PixelImage>,
    pub step: usize,
    pub history: Vec<String>,
    pub cached_score: Option<ScoreReport>,
}

impl ImageState {
    pub fn initial(image: PixelImage) -> Self {
        Self {
            image: Arc::new(image),
            step: 0,
            history: Vec::new(),
            cached_score: None,
        }
    }

    /// The state reached by applying `action_id`, producing `image`.
    pub fn successor(&self, action_id: &str, image: PixelImage) -> Self {
        let mut history = self.history.clone();
        history.push(action_id.to_string());
        Self {
            image: Arc::new(image),
            step: self.step + 1,
            history,
            cached_score: None,
        }
    }

    pub fn with_score(mut self, report: ScoreReport) -> Self {
        self.cached_score = Some(report);
        self
    }

    pub fn digest(&self) -> u64 {
        content_hash(&self.image)
    }

    pub fn to_record(&self) -> StateRecord {
        StateRecord {
            step: self.step,
            history: self.history.clone(),
            digest: format!("{:016x}", self.digest()),
            width: self.image.width(),
            height: self.image.height(),
            score: self.cached_score.clone(),
        }
    }
}

/// JSON form of an [`ImageState`]; pixels are written separately as PNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub step: usize,
    pub history: Vec<String>,
    pub digest: String,
    pub width: usize,
    pub height: usize,
    pub score: Option<ScoreReport>,
}
