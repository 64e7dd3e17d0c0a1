//! Artefact amplification, zooming and flicker, composed into trial presentations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{to_u8, CropRect, Image, ImageError};
use crate::model::Triplet;

/// Seconds the stimuli stay on screen.
pub const DISPLAY_SECONDS: f64 = 5.0;
/// Seconds an observer has to answer.
pub const RESPONSE_WINDOW_SECONDS: f64 = 8.0;
pub const DEFAULT_ALPHA: f64 = 2.0;
pub const DEFAULT_FLICKER_HZ: f64 = 8.0;

pub const STILL_QUESTION: &str = "Which image is more similar to the image in the middle?";
pub const FLICKER_QUESTION: &str = "Which image has a stronger flickering effect?";

#[derive(Debug, Error)]
pub enum BoostError {
    #[error("amplification factor must be > 1, got {0}")]
    InvalidAlpha(f64),
    #[error("zoom factor must be at least 1")]
    InvalidFactor,
    #[error("flicker frequency must be positive, got {0}")]
    InvalidFrequency(f64),
    #[error("stimulus {0} has no image")]
    MissingImage(usize),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Linear amplification of `distorted − reference` by `alpha`, reduced per
/// pixel so that no channel leaves `[0, 255]`.
pub fn amplify(reference: &Image, distorted: &Image, alpha: f64) -> Result<Image, BoostError> {
    check_alpha(alpha)?;
    reference.same_size(distorted)?;
    let mut out = reference.clone();
    for ((o, r), d) in
        out.data_mut().chunks_exact_mut(3).zip(reference.data().chunks_exact(3)).zip(distorted.data().chunks_exact(3))
    {
        let (a, _) = effective_alpha(r, d, alpha);
        for c in 0..3 {
            let v = f64::from(r[c]);
            o[c] = to_u8(v + a * (f64::from(d[c]) - v));
        }
    }
    Ok(out)
}

fn check_alpha(alpha: f64) -> Result<(), BoostError> {
    if alpha > 1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(BoostError::InvalidAlpha(alpha))
    }
}

/// Shared factor for one pixel and, per channel, whether its own limit is below `alpha`.
fn effective_alpha(r: &[u8], d: &[u8], alpha: f64) -> (f64, [bool; 3]) {
    let mut a = alpha;
    let mut limited = [false; 3];
    for c in 0..3 {
        let v = f64::from(r[c]);
        let diff = f64::from(d[c]) - v;
        let max = if diff > 0.0 {
            (255.0 - v) / diff
        } else if diff < 0.0 {
            -v / diff
        } else {
            alpha
        };
        limited[c] = max < alpha;
        a = a.min(max);
    }
    (a, limited)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampFractions {
    /// Fraction of pixels whose own channel limit falls below `alpha`.
    pub per_channel: [f64; 3],
    /// Fraction of pixels whose effective factor falls below `alpha`.
    pub overall: f64,
}

pub fn clamp_fraction(reference: &Image, distorted: &Image, alpha: f64) -> Result<ClampFractions, BoostError> {
    check_alpha(alpha)?;
    reference.same_size(distorted)?;
    let mut channel = [0usize; 3];
    let mut overall = 0usize;
    for (r, d) in reference.data().chunks_exact(3).zip(distorted.data().chunks_exact(3)) {
        let (a, limited) = effective_alpha(r, d, alpha);
        if a < alpha {
            overall += 1;
        }
        for c in 0..3 {
            channel[c] += usize::from(limited[c]);
        }
    }
    let n = (reference.data().len() / 3).max(1) as f64;
    Ok(ClampFractions { per_channel: channel.map(|c| c as f64 / n), overall: overall as f64 / n })
}

/// Keys cubic convolution kernel with `a = −0.5`.
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Taps and weights for each output coordinate of a 1-D bicubic resize.
fn resample_taps(src: usize, factor: u32) -> Vec<([usize; 4], [f64; 4])> {
    let f = f64::from(factor);
    (0..src * factor as usize)
        .map(|o| {
            let s = (o as f64 + 0.5) / f - 0.5;
            let base = s.floor();
            let t = s - base;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for m in 0..4 {
                let p = base as isize - 1 + m as isize;
                idx[m] = p.clamp(0, src as isize - 1) as usize;
                w[m] = cubic_weight(t - (m as f64 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

/// Bicubic upscale by an integer factor with edge replication.
pub fn upscale_bicubic(image: &Image, factor: u32) -> Result<Image, BoostError> {
    if factor == 0 {
        return Err(BoostError::InvalidFactor);
    }
    let (w, h) = (image.width() as usize, image.height() as usize);
    let (ow, oh) = (w * factor as usize, h * factor as usize);
    let xt = resample_taps(w, factor);
    let yt = resample_taps(h, factor);
    let planes = image.planes().map(|plane| {
        let mut rows = vec![0.0; ow * h];
        for y in 0..h {
            for (x, (idx, wt)) in xt.iter().enumerate() {
                rows[y * ow + x] = (0..4).map(|m| wt[m] * plane[y * w + idx[m]]).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for (y, (idx, wt)) in yt.iter().enumerate() {
            for x in 0..ow {
                out[y * ow + x] = (0..4).map(|m| wt[m] * rows[idx[m] * ow + x]).sum();
            }
        }
        out
    });
    Ok(Image::from_planes(ow as u32, oh as u32, &planes))
}

/// Crops `rect` and enlarges it by `factor` with bicubic interpolation.
pub fn zoom(image: &Image, rect: CropRect, factor: u32) -> Result<Image, BoostError> {
    upscale_bicubic(&image.crop(rect)?, factor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomSpec {
    pub crop_rect: CropRect,
    #[serde(default = "default_zoom_factor")]
    pub factor: u32,
}

fn default_zoom_factor() -> u32 {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlickerSpec {
    #[serde(default = "default_flicker_hz")]
    pub frequency_hz: f64,
}

fn default_flicker_hz() -> f64 {
    DEFAULT_FLICKER_HZ
}

impl Default for FlickerSpec {
    fn default() -> Self {
        Self { frequency_hz: DEFAULT_FLICKER_HZ }
    }
}

impl FlickerSpec {
    /// Time between buffer swaps: two swaps per period.
    pub fn swap_interval_ms(&self) -> f64 {
        1000.0 / (2.0 * self.frequency_hz)
    }
}

/// Active boosting transforms; the default is the plain presentation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoostSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplify: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoom: Option<ZoomSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flicker: Option<FlickerSpec>,
}

impl BoostSpec {
    /// Short name such as `plain`, `A`, `ZF` or `AZF`.
    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.amplify.is_some() {
            s.push('A');
        }
        if self.zoom.is_some() {
            s.push('Z');
        }
        if self.flicker.is_some() {
            s.push('F');
        }
        if s.is_empty() {
            s.push_str("plain");
        }
        s
    }

    /// Builds a spec from a label with default settings; `crop` is required for Z.
    pub fn from_label(label: &str, crop: Option<CropRect>) -> Result<Self, String> {
        if label == "plain" {
            return Ok(Self::default());
        }
        let mut spec = Self::default();
        for ch in label.chars() {
            match ch {
                'A' => spec.amplify = Some(DEFAULT_ALPHA),
                'Z' => {
                    let crop_rect = crop.ok_or("zoom needs a crop rectangle")?;
                    spec.zoom = Some(ZoomSpec { crop_rect, factor: 2 });
                }
                'F' => spec.flicker = Some(FlickerSpec::default()),
                other => return Err(format!("unknown boosting flag {other:?}")),
            }
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresentationMode {
    StillTriplet,
    FlickerPair,
}

/// One displayed image: which stimulus it shows and the id of the rendered frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub stimulus: usize,
    pub image_id: String,
}

/// Screen position showing one frame (still) or alternating frames (flicker).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Panel {
    pub frames: Vec<FrameRef>,
}

/// Display instructions for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresentationSpec {
    pub mode: PresentationMode,
    pub triplet: Triplet,
    pub boost: BoostSpec,
    /// Still: left, pivot, right. Flicker: left and right, each alternating with the pivot.
    pub panels: Vec<Panel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swap_interval_ms: Option<f64>,
    pub display_seconds: f64,
    pub response_window_seconds: f64,
    pub question: String,
}

impl PresentationSpec {
    pub fn left_frames(&self) -> &[FrameRef] {
        &self.panels[0].frames
    }

    pub fn right_frames(&self) -> &[FrameRef] {
        &self.panels[self.panels.len() - 1].frames
    }
}

/// A presentation together with the rendered frames it references.
#[derive(Debug, Clone, PartialEq)]
pub struct Presentation {
    pub spec: PresentationSpec,
    /// `(image_id, image)` for every distinct frame.
    pub frames: Vec<(String, Image)>,
}

impl Presentation {
    pub fn frame(&self, id: &str) -> Option<&Image> {
        self.frames.iter().find(|(k, _)| k == id).map(|(_, img)| img)
    }
}

/// Renders `triplet` from `images` (indexed by stimulus) under `spec`.
///
/// `sequence_id` prefixes the frame ids so that frames from different
/// sequences do not collide.
pub fn compose_presentation(
    sequence_id: &str,
    triplet: Triplet,
    images: &[Image],
    spec: &BoostSpec,
) -> Result<Presentation, BoostError> {
    if let Some(alpha) = spec.amplify {
        check_alpha(alpha)?;
    }
    if let Some(f) = spec.flicker {
        if !(f.frequency_hz > 0.0) {
            return Err(BoostError::InvalidFrequency(f.frequency_hz));
        }
    }
    let get = |s: usize| images.get(s).ok_or(BoostError::MissingImage(s));
    let pivot = get(triplet.j)?;
    let mut frames: Vec<(String, Image)> = Vec::new();
    let mut render = |s: usize| -> Result<FrameRef, BoostError> {
        let mut id = format!("{sequence_id}/{s}");
        let mut img = get(s)?.clone();
        if let (Some(alpha), true) = (spec.amplify, s != triplet.j) {
            img = amplify(pivot, &img, alpha)?;
            id.push_str(&format!("/a{alpha}p{}", triplet.j));
        }
        if let Some(z) = spec.zoom {
            img = zoom(&img, z.crop_rect, z.factor)?;
            let r = z.crop_rect;
            id.push_str(&format!("/z{}_{}_{}_{}x{}", r.x, r.y, r.width, r.height, z.factor));
        }
        if !frames.iter().any(|(k, _)| *k == id) {
            frames.push((id.clone(), img));
        }
        Ok(FrameRef { stimulus: s, image_id: id })
    };
    let left = render(triplet.i)?;
    let centre = render(triplet.j)?;
    let right = render(triplet.k)?;
    let spec_out = match spec.flicker {
        Some(f) => PresentationSpec {
            mode: PresentationMode::FlickerPair,
            triplet,
            boost: *spec,
            panels: vec![Panel { frames: vec![left, centre.clone()] }, Panel { frames: vec![right, centre] }],
            swap_interval_ms: Some(f.swap_interval_ms()),
            display_seconds: DISPLAY_SECONDS,
            response_window_seconds: RESPONSE_WINDOW_SECONDS,
            question: FLICKER_QUESTION.into(),
        },
        None => PresentationSpec {
            mode: PresentationMode::StillTriplet,
            triplet,
            boost: *spec,
            panels: vec![Panel { frames: vec![left] }, Panel { frames: vec![centre] }, Panel { frames: vec![right] }],
            swap_interval_ms: None,
            display_seconds: DISPLAY_SECONDS,
            response_window_seconds: RESPONSE_WINDOW_SECONDS,
            question: STILL_QUESTION.into(),
        },
    };
    Ok(Presentation { spec: spec_out, frames })
}
