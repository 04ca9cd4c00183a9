//! Converts a sign patch to CIE Lab, normalizes its contrast and re-renders
//! it at a different brightness and contrast.

use image::{Rgba, RgbaImage};
use signkit::appearance::{
    apply_appearance_distortion, lab_to_srgb, mean_intensity, normalize_contrast, srgb_pixel_to_lab, srgb_to_lab,
};

fn main() -> signkit::Result<()> {
    for rgb in [[255, 255, 255], [0, 0, 0], [200, 30, 40], [20, 60, 200]] {
        println!("sRGB {rgb:?} -> Lab {:.2?}", srgb_pixel_to_lab(rgb));
    }

    // a dim red disc with a white bar on a transparent background
    let patch = RgbaImage::from_fn(48, 48, |x, y| {
        let (dx, dy) = (x as f64 - 23.5, y as f64 - 23.5);
        if dx * dx + dy * dy > 23.0 * 23.0 {
            Rgba([0, 0, 0, 0])
        } else if dy.abs() < 5.0 && dx.abs() < 16.0 {
            Rgba([150, 150, 150, 255])
        } else {
            Rgba([90, 20, 25, 255])
        }
    });
    let lab = srgb_to_lab(&patch);
    println!("mean L of the raw patch: {:.2}", mean_intensity(&lab)?);

    let normalized = normalize_contrast(&lab);
    let l: Vec<f64> = normalized.patch.opaque_lightness().collect();
    let (lo, hi) = l.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
    println!("after contrast normalization: L in [{lo:.1}, {hi:.1}]");

    for (target, contrast) in [(30.0, 1.0), (70.0, 1.0), (50.0, 0.5), (50.0, 1.8)] {
        let distorted = apply_appearance_distortion(&normalized.patch, target, contrast)?;
        let rgb = lab_to_srgb(&distorted);
        println!(
            "target L {target:>4}, contrast {contrast:.1}: mean L {:.2}, bar pixel {:?}, disc pixel {:?}",
            mean_intensity(&distorted)?,
            rgb.get_pixel(24, 24).0,
            rgb.get_pixel(24, 8).0
        );
    }
    Ok(())
}
