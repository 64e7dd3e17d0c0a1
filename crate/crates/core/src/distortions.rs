//! Parametric distortion generators, perceptual level design and sequence manifests.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{CropRect, Image, ImageError};
use crate::rng;

pub use crate::image::psnr;

/// Standard deviation of the blur inside the unsharp mask.
pub const SHARPEN_SIGMA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum DistortionError {
    #[error("distortion parameter must be non-negative, got {0}")]
    NegativeParameter(f64),
    #[error("{0} needs a random seed")]
    MissingSeed(DistortionType),
    #[error("invalid probe data: {0}")]
    InvalidProbes(String),
    #[error("fitted slope {0} is not positive")]
    NonPositiveSlope(f64),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionType {
    ColorDiffusion,
    HighSharpen,
    Jitter,
    LensBlur,
    MotionBlur,
    MultiplicativeNoise,
}

impl DistortionType {
    pub const ALL: [DistortionType; 6] = [
        Self::ColorDiffusion,
        Self::HighSharpen,
        Self::Jitter,
        Self::LensBlur,
        Self::MotionBlur,
        Self::MultiplicativeNoise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ColorDiffusion => "color_diffusion",
            Self::HighSharpen => "high_sharpen",
            Self::Jitter => "jitter",
            Self::LensBlur => "lens_blur",
            Self::MotionBlur => "motion_blur",
            Self::MultiplicativeNoise => "multiplicative_noise",
        }
    }

    pub fn with_parameter(self, p: f64) -> DistortionKind {
        match self {
            Self::ColorDiffusion => DistortionKind::ColorDiffusion(p),
            Self::HighSharpen => DistortionKind::HighSharpen(p),
            Self::Jitter => DistortionKind::Jitter(p),
            Self::LensBlur => DistortionKind::LensBlur(p),
            Self::MotionBlur => DistortionKind::MotionBlur(p),
            Self::MultiplicativeNoise => DistortionKind::MultiplicativeNoise(p),
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Self::Jitter | Self::MultiplicativeNoise)
    }
}

impl std::fmt::Display for DistortionType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DistortionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| format!("unknown distortion type {s:?}"))
    }
}

/// A distortion together with its physical parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "parameter", rename_all = "snake_case")]
pub enum DistortionKind {
    /// Standard deviation of the blur applied to the CIELAB a and b channels.
    ColorDiffusion(f64),
    /// Unsharp-mask strength.
    HighSharpen(f64),
    /// Maximum per-pixel displacement in pixels.
    Jitter(f64),
    /// Disk radius in pixels.
    LensBlur(f64),
    /// Length of the 45° line kernel in pixels.
    MotionBlur(f64),
    /// Variance of the uniform multiplicative noise.
    MultiplicativeNoise(f64),
}

impl DistortionKind {
    pub fn distortion_type(&self) -> DistortionType {
        match self {
            Self::ColorDiffusion(_) => DistortionType::ColorDiffusion,
            Self::HighSharpen(_) => DistortionType::HighSharpen,
            Self::Jitter(_) => DistortionType::Jitter,
            Self::LensBlur(_) => DistortionType::LensBlur,
            Self::MotionBlur(_) => DistortionType::MotionBlur,
            Self::MultiplicativeNoise(_) => DistortionType::MultiplicativeNoise,
        }
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            Self::ColorDiffusion(p)
            | Self::HighSharpen(p)
            | Self::Jitter(p)
            | Self::LensBlur(p)
            | Self::MotionBlur(p)
            | Self::MultiplicativeNoise(p) => p,
        }
    }
}

/// Applies `kind` to `image`. Jitter and noise draw from `seed`.
pub fn apply_distortion(image: &Image, kind: DistortionKind, seed: Option<u64>) -> Result<Image, DistortionError> {
    let p = kind.parameter();
    if !(p >= 0.0) || !p.is_finite() {
        return Err(DistortionError::NegativeParameter(p));
    }
    if p == 0.0 {
        return Ok(image.clone());
    }
    let seed = || seed.ok_or(DistortionError::MissingSeed(kind.distortion_type()));
    let (w, h) = (image.width() as usize, image.height() as usize);
    let out = match kind {
        DistortionKind::ColorDiffusion(sd) => {
            let [l, a, b] = rgb_to_lab_planes(image);
            let a = gaussian_blur(&a, w, h, sd);
            let b = gaussian_blur(&b, w, h, sd);
            lab_planes_to_rgb(image.width(), image.height(), &[l, a, b])
        }
        DistortionKind::HighSharpen(strength) => {
            let planes = image.planes();
            let sharpened = planes.map(|plane| {
                let blurred = gaussian_blur(&plane, w, h, SHARPEN_SIGMA);
                plane.iter().zip(&blurred).map(|(v, b)| v + strength * (v - b)).collect::<Vec<_>>()
            });
            Image::from_planes(image.width(), image.height(), &sharpened)
        }
        DistortionKind::Jitter(m) => {
            let mut rng = rng::stream(seed()?, 0);
            Image::from_fn(image.width(), image.height(), |x, y| {
                let dx: f64 = rng.random_range(-m..=m);
                let dy: f64 = rng.random_range(-m..=m);
                let sx = (f64::from(x) + dx).round().clamp(0.0, (w - 1) as f64) as u32;
                let sy = (f64::from(y) + dy).round().clamp(0.0, (h - 1) as f64) as u32;
                image.pixel(sx, sy)
            })
        }
        DistortionKind::LensBlur(radius) => convolve_image(image, &disk_kernel(radius)),
        DistortionKind::MotionBlur(length) => convolve_image(image, &line_kernel(length)),
        DistortionKind::MultiplicativeNoise(variance) => {
            let half_width = (3.0 * variance).sqrt();
            let mut rng = rng::stream(seed()?, 0);
            let mut out = image.clone();
            for v in out.data_mut() {
                let n: f64 = rng.random_range(-half_width..=half_width);
                let x = f64::from(*v);
                *v = crate::image::to_u8(x + n * x);
            }
            out
        }
    };
    Ok(out)
}

/// Square kernel with odd side length, centre at `(half, half)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub half: usize,
    pub weights: Vec<f64>,
}

impl Kernel {
    fn side(&self) -> usize {
        2 * self.half + 1
    }
}

/// Samples per pixel side used for anti-aliased rasterization.
const SUPERSAMPLE: usize = 16;

/// Normalized disk of the given radius, weighted by covered pixel area.
pub fn disk_kernel(radius: f64) -> Kernel {
    let half = radius.ceil() as usize;
    let side = 2 * half + 1;
    let mut weights = vec![0.0; side * side];
    let r2 = radius * radius;
    for (idx, w) in weights.iter_mut().enumerate() {
        let cx = (idx % side) as f64 - half as f64;
        let cy = (idx / side) as f64 - half as f64;
        let mut inside = 0;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let x = cx - 0.5 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                let y = cy - 0.5 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                if x * x + y * y <= r2 {
                    inside += 1;
                }
            }
        }
        *w = inside as f64;
    }
    normalize(Kernel { half, weights })
}

/// Normalized one-pixel-wide line of the given length at 45° (rising to the
/// right), rasterized by sweeping a unit square along the segment.
pub fn line_kernel(length: f64) -> Kernel {
    let half_len = 0.5 * length;
    let reach = half_len * std::f64::consts::FRAC_1_SQRT_2;
    let half = (reach + 0.5).ceil() as usize;
    let side = 2 * half + 1;
    let mut weights = vec![0.0; side * side];
    let samples = (length * 4.0 * SUPERSAMPLE as f64).ceil() as usize + 1;
    for s in 0..samples {
        let t = if samples == 1 { 0.0 } else { -half_len + length * s as f64 / (samples - 1) as f64 };
        let px = t * std::f64::consts::FRAC_1_SQRT_2;
        let py = -t * std::f64::consts::FRAC_1_SQRT_2;
        // Overlap of the unit square centred at (px, py) with each pixel cell.
        for gy in 0..side {
            let cy = gy as f64 - half as f64;
            let oy = (1.0 - (py - cy).abs()).max(0.0);
            if oy == 0.0 {
                continue;
            }
            for gx in 0..side {
                let cx = gx as f64 - half as f64;
                let ox = (1.0 - (px - cx).abs()).max(0.0);
                weights[gy * side + gx] += ox * oy;
            }
        }
    }
    normalize(Kernel { half, weights })
}

fn normalize(mut k: Kernel) -> Kernel {
    let sum: f64 = k.weights.iter().sum();
    k.weights.iter_mut().for_each(|w| *w /= sum);
    k
}

fn convolve_image(image: &Image, kernel: &Kernel) -> Image {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let planes = image.planes().map(|p| convolve(&p, w, h, kernel));
    Image::from_planes(image.width(), image.height(), &planes)
}

/// 2-D convolution with edge replication.
pub fn convolve(plane: &[f64], w: usize, h: usize, kernel: &Kernel) -> Vec<f64> {
    let side = kernel.side();
    let half = kernel.half as isize;
    let taps: Vec<(isize, isize, f64)> = kernel
        .weights
        .iter()
        .enumerate()
        .filter(|(_, &wt)| wt != 0.0)
        .map(|(idx, &wt)| ((idx % side) as isize - half, (idx / side) as isize - half, wt))
        .collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for &(dx, dy, wt) in &taps {
                // Kernels are point-symmetric, so correlation equals convolution.
                let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                acc += wt * plane[sy * w + sx];
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

/// Separable gaussian blur (radius ⌈3σ⌉) with edge replication.
pub fn gaussian_blur(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, k) in taps.iter().zip(-radius..=radius) {
                let sx = (x as isize + k).clamp(0, w as isize - 1) as usize;
                acc += t * plane[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, k) in taps.iter().zip(-radius..=radius) {
                let sy = (y as isize + k).clamp(0, h as isize - 1) as usize;
                acc += t * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Linear sRGB to XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn xyz_to_rgb_matrix() -> [[f64; 3]; 3] {
    let m = RGB_TO_XYZ;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            inv[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    inv
}

fn white_point() -> [f64; 3] {
    RGB_TO_XYZ.map(|row| row.iter().sum())
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.max(0.0).powf(1.0 / 2.4) - 0.055
    }
}

const LAB_DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > LAB_DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * LAB_DELTA * LAB_DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > LAB_DELTA {
        t * t * t
    } else {
        3.0 * LAB_DELTA * LAB_DELTA * (t - 4.0 / 29.0)
    }
}

/// 8-bit sRGB to CIELAB (D65).
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|v| srgb_to_linear(f64::from(v) / 255.0));
    let white = white_point();
    let xyz: [f64; 3] = std::array::from_fn(|r| (0..3).map(|c| RGB_TO_XYZ[r][c] * lin[c]).sum::<f64>() / white[r]);
    let [fx, fy, fz] = xyz.map(lab_f);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// CIELAB (D65) to real-valued sRGB in `[0, 255]` units (unclamped).
pub fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    lab_to_rgb_with(lab, &xyz_to_rgb_matrix(), &white_point())
}

fn lab_to_rgb_with(lab: [f64; 3], inv: &[[f64; 3]; 3], white: &[f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let f = [fy + lab[1] / 500.0, fy, fy - lab[2] / 200.0];
    let xyz: [f64; 3] = std::array::from_fn(|r| lab_f_inv(f[r]) * white[r]);
    std::array::from_fn(|r| {
        let lin: f64 = (0..3).map(|c| inv[r][c] * xyz[c]).sum();
        255.0 * linear_to_srgb(lin)
    })
}

fn rgb_to_lab_planes(image: &Image) -> [Vec<f64>; 3] {
    let n = image.data().len() / 3;
    let mut planes: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(n));
    for px in image.data().chunks_exact(3) {
        let lab = rgb_to_lab([px[0], px[1], px[2]]);
        for c in 0..3 {
            planes[c].push(lab[c]);
        }
    }
    planes
}

fn lab_planes_to_rgb(width: u32, height: u32, lab: &[Vec<f64>; 3]) -> Image {
    let inv = xyz_to_rgb_matrix();
    let white = white_point();
    let n = lab[0].len();
    let mut planes: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(n));
    for p in 0..n {
        let rgb = lab_to_rgb_with([lab[0][p], lab[1][p], lab[2][p]], &inv, &white);
        for c in 0..3 {
            planes[c].push(rgb[c]);
        }
    }
    Image::from_planes(width, height, &planes)
}

/// Physical parameters of equally spaced perceptual levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDesign {
    pub levels: usize,
    pub spacing_jnd: f64,
    /// `levels + 1` values starting at 0.
    pub lambdas: Vec<f64>,
    /// Fitted impairment (JND) per unit of the physical parameter.
    pub slope: f64,
}

/// Fits a line through the origin to probe impairments and places
/// `levels` parameters `spacing_jnd` apart on it.
///
/// Only the last probe may exceed 3 JND.
pub fn calibrate_levels(
    probe_lambdas: &[f64],
    probe_impairments_jnd: &[f64],
    levels: usize,
    spacing_jnd: f64,
) -> Result<LevelDesign, DistortionError> {
    let n = probe_lambdas.len();
    if n != probe_impairments_jnd.len() || n < 2 {
        return Err(DistortionError::InvalidProbes("need two equally long vectors of ≥ 2 probes".into()));
    }
    if probe_lambdas.iter().chain(probe_impairments_jnd).any(|v| !v.is_finite()) {
        return Err(DistortionError::InvalidProbes("non-finite probe value".into()));
    }
    if probe_lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DistortionError::InvalidProbes("probe parameters must be ascending".into()));
    }
    if probe_impairments_jnd[..n - 1].iter().any(|&v| v > 3.0) {
        return Err(DistortionError::InvalidProbes("only the last probe may exceed 3 JND".into()));
    }
    if levels == 0 || !(spacing_jnd > 0.0) {
        return Err(DistortionError::InvalidProbes("levels and spacing must be positive".into()));
    }
    let sxy: f64 = probe_lambdas.iter().zip(probe_impairments_jnd).map(|(x, y)| x * y).sum();
    let sxx: f64 = probe_lambdas.iter().map(|x| x * x).sum();
    let slope = sxy / sxx;
    if !(slope > 0.0) {
        return Err(DistortionError::NonPositiveSlope(slope));
    }
    let lambdas = (0..=levels).map(|k| k as f64 * spacing_jnd / slope).collect();
    Ok(LevelDesign { levels, spacing_jnd, lambdas, slope })
}

/// Geometric probe grid `first · ratio^m`, preceded by 0.
pub fn probe_grid(first: f64, ratio: f64, count: usize) -> Vec<f64> {
    std::iter::once(0.0).chain((0..count).map(|m| first * ratio.powi(m as i32))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLevel {
    pub level: usize,
    pub lambda: f64,
    pub file: String,
}

/// Description of one stored image sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub source_id: String,
    pub distortion_type: String,
    pub levels: Vec<ManifestLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_rect: Option<CropRect>,
}

impl SequenceManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DistortionError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DistortionError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Loads every level image relative to `dir`.
    pub fn load_images(&self, dir: impl AsRef<Path>) -> Result<Vec<Image>, DistortionError> {
        let mut levels = self.levels.clone();
        levels.sort_by_key(|l| l.level);
        levels.iter().map(|l| Ok(Image::load_png(dir.as_ref().join(&l.file))?)).collect()
    }
}

/// Renders every level of `design` and writes PNGs plus `manifest.json` into `dir`.
pub fn write_sequence(
    source: &Image,
    source_id: &str,
    distortion: DistortionType,
    design: &LevelDesign,
    seed: Option<u64>,
    crop_rect: Option<CropRect>,
    dir: impl AsRef<Path>,
) -> Result<SequenceManifest, DistortionError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut levels = Vec::with_capacity(design.lambdas.len());
    for (level, &lambda) in design.lambdas.iter().enumerate() {
        let img = apply_distortion(source, distortion.with_parameter(lambda), seed)?;
        let file = format!("{source_id}_{}_{level:02}.png", distortion.as_str());
        img.save_png(dir.join(&file))?;
        levels.push(ManifestLevel { level, lambda, file });
    }
    let manifest = SequenceManifest {
        source_id: source_id.to_string(),
        distortion_type: distortion.as_str().into(),
        levels,
        crop_rect,
    };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: u32, h: u32) -> Image {
        Image::from_fn(w, h, |x, y| {
            let v = |a: f64| (127.5 + 100.0 * a.sin()) as u8;
            [v(x as f64 * 0.31 + y as f64 * 0.07), v(y as f64 * 0.23), v((x * y) as f64 * 0.011)]
        })
    }

    #[test]
    fn zero_parameter_is_identity() {
        let img = textured(23, 17);
        for t in DistortionType::ALL {
            assert_eq!(apply_distortion(&img, t.with_parameter(0.0), None).unwrap(), img);
        }
    }

    #[test]
    fn negative_parameter_rejected() {
        let img = textured(4, 4);
        assert!(matches!(
            apply_distortion(&img, DistortionKind::LensBlur(-1.0), None),
            Err(DistortionError::NegativeParameter(_))
        ));
        assert!(matches!(
            apply_distortion(&img, DistortionKind::Jitter(1.0), None),
            Err(DistortionError::MissingSeed(_))
        ));
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Image::filled(20, 20, [37, 180, 99]);
        for kind in [
            DistortionKind::LensBlur(3.3),
            DistortionKind::MotionBlur(7.0),
            DistortionKind::ColorDiffusion(2.0),
            DistortionKind::HighSharpen(1.5),
        ] {
            assert_eq!(apply_distortion(&img, kind, None).unwrap(), img, "{kind:?}");
        }
    }

    #[test]
    fn kernels_are_normalized_and_symmetric() {
        for k in [disk_kernel(0.3), disk_kernel(2.5), line_kernel(1.0), line_kernel(9.0)] {
            assert!((k.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let n = k.weights.len();
            for i in 0..n {
                assert!((k.weights[i] - k.weights[n - 1 - i]).abs() < 1e-12);
            }
        }
        let line = line_kernel(9.0);
        let side = 2 * line.half + 1;
        // Mass lies along the anti-diagonal.
        let on_diag: f64 = (0..side).map(|d| line.weights[d * side + (side - 1 - d)]).sum();
        assert!(on_diag > 0.5);
    }

    #[test]
    fn stochastic_kinds_are_deterministic() {
        let img = textured(16, 16);
        for kind in [DistortionKind::Jitter(2.0), DistortionKind::MultiplicativeNoise(0.05)] {
            let a = apply_distortion(&img, kind, Some(9)).unwrap();
            let b = apply_distortion(&img, kind, Some(9)).unwrap();
            let c = apply_distortion(&img, kind, Some(10)).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn lab_round_trip_stride_7() {
        let inv = xyz_to_rgb_matrix();
        let white = white_point();
        for r in (0..=255).step_by(7) {
            for g in (0..=255).step_by(7) {
                for b in (0..=255).step_by(7) {
                    let rgb = [r as u8, g as u8, b as u8];
                    let back = lab_to_rgb_with(rgb_to_lab(rgb), &inv, &white);
                    for c in 0..3 {
                        assert!((back[c] - f64::from(rgb[c])).abs() <= 1.0, "{rgb:?} -> {back:?}");
                    }
                }
            }
        }
        let white_lab = rgb_to_lab([255, 255, 255]);
        assert!((white_lab[0] - 100.0).abs() < 1e-9 && white_lab[1].abs() < 1e-9 && white_lab[2].abs() < 1e-9);
    }

    #[test]
    fn level_design_examples() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let d = calibrate_levels(&x, &x, 12, 0.25).unwrap();
        for (k, l) in d.lambdas.iter().enumerate() {
            assert!((l - 0.25 * k as f64).abs() < 1e-12);
        }
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        let d = calibrate_levels(&x, &y, 30, 0.1).unwrap();
        assert!((d.lambdas[30] - 3.0 / 0.5).abs() < 1e-12);
        assert!(calibrate_levels(&x, &[0.0, -1.0, -2.0, -3.0, -4.0], 12, 0.25).is_err());
        assert!(calibrate_levels(&x, &[0.0, 3.5, 4.0, 4.5, 5.0], 12, 0.25).is_err());
    }
}
