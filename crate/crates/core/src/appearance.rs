//! CIE L*a*b* conversion and intensity normalization/distortion.
//!
//! Conversion follows the sRGB transfer curve and the sRGB-to-XYZ matrix
//! for D65; the reference white is taken as the matrix image of RGB white,
//! so sRGB white maps to exactly `L = 100, a = b = 0`.

use std::sync::LazyLock;

use image::{Rgba, RgbaImage};
use nalgebra::Matrix3;

use crate::error::{Error, Result};

/// Pixels with at least this alpha count as opaque.
pub const OPAQUE_ALPHA: u8 = 128;

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

struct Tables {
    rgb_to_xyz: Matrix3<f64>,
    xyz_to_rgb: Matrix3<f64>,
    white: [f64; 3],
    linear: [f64; 256],
}

static TABLES: LazyLock<Tables> = LazyLock::new(|| {
    let rgb_to_xyz = Matrix3::new(
        0.4124564, 0.3575761, 0.1804375, //
        0.2126729, 0.7151522, 0.0721750, //
        0.0193339, 0.1191920, 0.9503041,
    );
    let white = [
        rgb_to_xyz[(0, 0)] + rgb_to_xyz[(0, 1)] + rgb_to_xyz[(0, 2)],
        rgb_to_xyz[(1, 0)] + rgb_to_xyz[(1, 1)] + rgb_to_xyz[(1, 2)],
        rgb_to_xyz[(2, 0)] + rgb_to_xyz[(2, 1)] + rgb_to_xyz[(2, 2)],
    ];
    let mut linear = [0.0; 256];
    for (i, v) in linear.iter_mut().enumerate() {
        *v = srgb_decode(i as f64 / 255.0);
    }
    Tables {
        rgb_to_xyz,
        xyz_to_rgb: rgb_to_xyz.try_inverse().expect("sRGB matrix is invertible"),
        white,
        linear,
    }
});

fn srgb_decode(c: f64) -> f64 {
    if c >= 1.0 {
        1.0
    } else if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_encode(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let t = f * f * f;
    if t > EPSILON {
        t
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

/// Converts one 8-bit sRGB color to `[L, a, b]`.
pub fn srgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let t = &*TABLES;
    let lin = [
        t.linear[rgb[0] as usize],
        t.linear[rgb[1] as usize],
        t.linear[rgb[2] as usize],
    ];
    let m = &t.rgb_to_xyz;
    let xyz = [
        m[(0, 0)] * lin[0] + m[(0, 1)] * lin[1] + m[(0, 2)] * lin[2],
        m[(1, 0)] * lin[0] + m[(1, 1)] * lin[1] + m[(1, 2)] * lin[2],
        m[(2, 0)] * lin[0] + m[(2, 1)] * lin[1] + m[(2, 2)] * lin[2],
    ];
    let yr = xyz[1] / t.white[1];
    let fx = lab_f(xyz[0] / t.white[0]);
    let fy = lab_f(yr);
    let fz = lab_f(xyz[2] / t.white[2]);
    let l = if yr > EPSILON { 116.0 * fy - 16.0 } else { KAPPA * yr };
    [l, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Converts `[L, a, b]` back to 8-bit sRGB, clamping out-of-gamut values.
pub fn lab_pixel_to_srgb(lab: [f64; 3]) -> [u8; 3] {
    let t = &*TABLES;
    let [l, a, b] = lab;
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let yr = if l > KAPPA * EPSILON {
        fy * fy * fy
    } else {
        l / KAPPA
    };
    let xyz = [
        lab_f_inv(fx) * t.white[0],
        yr * t.white[1],
        lab_f_inv(fz) * t.white[2],
    ];
    let m = &t.xyz_to_rgb;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let lin = m[(c, 0)] * xyz[0] + m[(c, 1)] * xyz[1] + m[(c, 2)] * xyz[2];
        *o = (srgb_encode(lin.clamp(0.0, 1.0)) * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Per-pixel L*a*b* values with the source alpha channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabPatch {
    pub width: u32,
    pub height: u32,
    pub lab: Vec<[f64; 3]>,
    pub alpha: Vec<u8>,
}

impl LabPatch {
    /// A patch with constant `L`, neutral chroma and full opacity.
    pub fn uniform(width: u32, height: u32, l: f64) -> Self {
        let n = (width * height) as usize;
        LabPatch {
            width,
            height,
            lab: vec![[l, 0.0, 0.0]; n],
            alpha: vec![255; n],
        }
    }

    pub fn from_lightness(width: u32, height: u32, values: &[f64]) -> Self {
        assert_eq!(values.len(), (width * height) as usize);
        LabPatch {
            width,
            height,
            lab: values.iter().map(|&l| [l, 0.0, 0.0]).collect(),
            alpha: vec![255; values.len()],
        }
    }

    pub fn opaque_lightness(&self) -> impl Iterator<Item = f64> + '_ {
        self.lab
            .iter()
            .zip(&self.alpha)
            .filter(|(_, &a)| a >= OPAQUE_ALPHA)
            .map(|(p, _)| p[0])
    }
}

pub fn srgb_to_lab(img: &RgbaImage) -> LabPatch {
    let (width, height) = img.dimensions();
    let mut lab = Vec::with_capacity((width * height) as usize);
    let mut alpha = Vec::with_capacity(lab.capacity());
    for p in img.pixels() {
        lab.push(srgb_pixel_to_lab([p.0[0], p.0[1], p.0[2]]));
        alpha.push(p.0[3]);
    }
    LabPatch {
        width,
        height,
        lab,
        alpha,
    }
}

pub fn lab_to_srgb(patch: &LabPatch) -> RgbaImage {
    RgbaImage::from_fn(patch.width, patch.height, |x, y| {
        let i = (y * patch.width + x) as usize;
        let [r, g, b] = lab_pixel_to_srgb(patch.lab[i]);
        Rgba([r, g, b, patch.alpha[i]])
    })
}

/// Linear-interpolated percentile (`p` in [0, 100]) of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let t = rank - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

/// Outcome of [`normalize_contrast`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub patch: LabPatch,
    /// Set when the opaque lightness range is empty or constant; the patch
    /// is then returned unchanged.
    pub degenerate: bool,
}

pub const CONTRAST_LOW: f64 = 5.0;
pub const CONTRAST_HIGH: f64 = 95.0;

/// Stretches `L` linearly so the 1st and 99th percentiles of opaque pixels
/// land at 5 and 95; chroma is untouched, `L` is clamped to [0, 100].
pub fn normalize_contrast(patch: &LabPatch) -> Normalized {
    let mut values: Vec<f64> = patch.opaque_lightness().collect();
    values.sort_by(f64::total_cmp);
    let degenerate = |patch: &LabPatch| Normalized {
        patch: patch.clone(),
        degenerate: true,
    };
    if values.len() < 2 {
        return degenerate(patch);
    }
    let lo = percentile(&values, 1.0);
    let hi = percentile(&values, 99.0);
    if !(hi - lo > 1e-9) {
        return degenerate(patch);
    }
    let gain = (CONTRAST_HIGH - CONTRAST_LOW) / (hi - lo);
    let mut out = patch.clone();
    for p in &mut out.lab {
        p[0] = (CONTRAST_LOW + gain * (p[0] - lo)).clamp(0.0, 100.0);
    }
    Normalized {
        patch: out,
        degenerate: false,
    }
}

/// Mean `L` over opaque pixels.
pub fn mean_intensity(patch: &LabPatch) -> Result<f64> {
    let (sum, n) = patch
        .opaque_lightness()
        .fold((0.0, 0usize), |(s, n), l| (s + l, n + 1));
    if n == 0 {
        return Err(Error::InvalidInput("patch has no opaque pixels".into()));
    }
    Ok(sum / n as f64)
}

pub const MAX_CONTRAST_SCALE: f64 = 3.0;

/// `L' = clamp(target_mean + contrast_scale * (L - mean))` on every pixel.
///
/// `contrast_scale` is accepted in `[0, 3]`; zero collapses the patch to
/// `target_mean`.
pub fn apply_appearance_distortion(
    patch: &LabPatch,
    target_mean: f64,
    contrast_scale: f64,
) -> Result<LabPatch> {
    if !(0.0..=MAX_CONTRAST_SCALE).contains(&contrast_scale) {
        return Err(Error::InvalidInput(format!(
            "contrast scale {contrast_scale} outside [0, {MAX_CONTRAST_SCALE}]"
        )));
    }
    let mean = mean_intensity(patch)?;
    let mut out = patch.clone();
    for p in &mut out.lab {
        p[0] = (target_mean + contrast_scale * (p[0] - mean)).clamp(0.0, 100.0);
    }
    Ok(out)
}
