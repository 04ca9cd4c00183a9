//! Plane-projective geometry: homography estimation (normalized DLT),
//! perspective warping and rotation decomposition.
//!
//! Euler angles obtained from an annotated polygon depend on camera
//! intrinsics that annotations do not carry. The default intrinsics use a
//! focal length of `max(image width, height)` and put the principal point at
//! the instance center. Only the shape of the angle distribution is used
//! downstream, so the absolute focal length matters little.

use image::{Rgba, RgbaImage};
use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::model::{Point, Template};

const DEGENERATE_SV_RATIO: f64 = 1e-8;
const MAX_ROTATION_RESIDUAL: f64 = 0.2;

/// Projective 3x3 transform, normalized to unit Frobenius norm with a
/// non-negative bottom-right entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self::normalized(Matrix3::identity())
    }

    /// Wraps a matrix, rejecting non-finite or numerically singular input.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("homography has non-finite entries".into()));
        }
        let sv = m.singular_values();
        let max = sv.max();
        if max <= 0.0 || sv.min() / max < 1e-12 {
            return Err(Error::Degenerate("homography is not invertible".into()));
        }
        Ok(Self::normalized(m))
    }

    fn normalized(m: Matrix3<f64>) -> Self {
        let mut m = m / m.norm();
        let pivot = if m[(2, 2)] != 0.0 {
            m[(2, 2)]
        } else {
            // sign of the largest-magnitude entry decides
            m.iter().copied().fold(0.0, |acc: f64, v| if v.abs() > acc.abs() { v } else { acc })
        };
        if pivot < 0.0 {
            m = -m;
        }
        Homography(m)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::normalized(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn scaling(sx: f64, sy: f64) -> Result<Self> {
        Self::from_matrix(Matrix3::new(sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let inv = self.0.try_inverse().expect("invertible by construction");
        Self::normalized(inv)
    }

    /// `other ∘ self`: apply `self` first.
    pub fn then(&self, other: &Homography) -> Self {
        Self::normalized(other.0 * self.0)
    }

    pub fn apply(&self, p: Point) -> Point {
        let v = self.0 * Vector3::new(p.x, p.y, 1.0);
        Point::new(v.x / v.z, v.y / v.z)
    }

    /// True when two homographies agree up to scale within `tol` (on the
    /// normalized matrices).
    pub fn approx_eq(&self, other: &Homography, tol: f64) -> bool {
        (self.0 - other.0).amax() < tol
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HomographyEstimate {
    pub homography: Homography,
    /// Root-mean-square reprojection error of `src` onto `dst`, in `dst` units.
    pub rms: f64,
}

fn hartley_normalize(points: &[Point]) -> Result<(Vec<Point>, Matrix3<f64>)> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| (p.x - cx).hypot(p.y - cy))
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(Error::Degenerate("coincident points".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let normalized = points
        .iter()
        .map(|p| Point::new(s * (p.x - cx), s * (p.y - cy)))
        .collect();
    Ok((normalized, t))
}

fn has_collinear_triple(points: &[Point]) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (points[i], points[j], points[k]);
                let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
                if cross.abs() < 1e-9 {
                    return true;
                }
            }
        }
    }
    false
}

/// Estimates `H` with `dst ~ H src` by the normalized direct linear
/// transform.
///
/// With exactly four correspondences any collinear triple is rejected; with
/// more, degeneracy is detected through the singular value spectrum of the
/// design matrix.
pub fn estimate_homography(src: &[Point], dst: &[Point]) -> Result<HomographyEstimate> {
    if src.len() != dst.len() {
        return Err(Error::InvalidInput(format!(
            "point count mismatch: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 4 {
        return Err(Error::NotEnoughPoints {
            required: 4,
            got: src.len(),
        });
    }
    let (src_n, t_src) = hartley_normalize(src)?;
    let (dst_n, t_dst) = hartley_normalize(dst)?;
    if src.len() == 4 && (has_collinear_triple(&src_n) || has_collinear_triple(&dst_n)) {
        return Err(Error::Degenerate("three collinear points".into()));
    }

    // At least 9 rows so the SVD yields a full right singular basis.
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in src_n.iter().zip(&dst_n).enumerate() {
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r = 2 * i;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[7]];
    if largest <= 0.0 || second_smallest / largest < DEGENERATE_SV_RATIO {
        return Err(Error::Degenerate(
            "point configuration does not determine a unique homography".into(),
        ));
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst.try_inverse().expect("similarity is invertible");
    let homography = Homography::from_matrix(t_dst_inv * hn * t_src)?;

    let sq: f64 = src
        .iter()
        .zip(dst)
        .map(|(p, q)| {
            let r = homography.apply(*p);
            (r.x - q.x).powi(2) + (r.y - q.y).powi(2)
        })
        .sum();
    Ok(HomographyEstimate {
        homography,
        rms: (sq / src.len() as f64).sqrt(),
    })
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Bilinear sample at a continuous position (pixel centers at `i + 0.5`).
/// Positions outside the source rectangle are transparent; inside, indices
/// are clamped at the edges. Interpolation is done on premultiplied alpha.
pub fn sample_bilinear(img: &RgbaImage, x: f64, y: f64) -> Rgba<u8> {
    let (w, h) = img.dimensions();
    if !(x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64) {
        return Rgba([0, 0, 0, 0]);
    }
    let fx = snap(x - 0.5);
    let fy = snap(y - 0.5);
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let clamp_x = |v: f64| v.clamp(0.0, (w - 1) as f64) as u32;
    let clamp_y = |v: f64| v.clamp(0.0, (h - 1) as f64) as u32;
    let taps = [
        (clamp_x(x0), clamp_y(y0), (1.0 - tx) * (1.0 - ty)),
        (clamp_x(x0 + 1.0), clamp_y(y0), tx * (1.0 - ty)),
        (clamp_x(x0), clamp_y(y0 + 1.0), (1.0 - tx) * ty),
        (clamp_x(x0 + 1.0), clamp_y(y0 + 1.0), tx * ty),
    ];
    let mut acc = [0.0f64; 4];
    for (px, py, wgt) in taps {
        if wgt == 0.0 {
            continue;
        }
        let p = img.get_pixel(px, py).0;
        let a = p[3] as f64 / 255.0;
        for c in 0..3 {
            acc[c] += wgt * a * p[c] as f64;
        }
        acc[3] += wgt * a;
    }
    if acc[3] <= 0.0 {
        return Rgba([0, 0, 0, 0]);
    }
    let to_u8 = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    Rgba([
        to_u8(acc[0] / acc[3]),
        to_u8(acc[1] / acc[3]),
        to_u8(acc[2] / acc[3]),
        to_u8(acc[3] * 255.0),
    ])
}

/// Warps `src` into a `width x height` canvas where `h` maps source
/// coordinates to output coordinates. Inverse-mapped, bilinear, no
/// anti-alias prefilter; pixels mapping outside the source are transparent.
pub fn warp_perspective(src: &RgbaImage, h: &Homography, width: u32, height: u32) -> RgbaImage {
    let inv = h.inverse();
    let m = inv.matrix();
    let mut out = RgbaImage::new(width, height);
    for (u, v, px) in out.enumerate_pixels_mut() {
        let (ox, oy) = (u as f64 + 0.5, v as f64 + 0.5);
        let z = m[(2, 0)] * ox + m[(2, 1)] * oy + m[(2, 2)];
        if z.abs() < 1e-15 {
            continue;
        }
        let sx = (m[(0, 0)] * ox + m[(0, 1)] * oy + m[(0, 2)]) / z;
        let sy = (m[(1, 0)] * ox + m[(1, 1)] * oy + m[(1, 2)]) / z;
        *px = sample_bilinear(src, sx, sy);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Rectified {
    pub patch: RgbaImage,
    /// Maps patch coordinates to template coordinates.
    pub homography: Homography,
    pub rms: f64,
}

/// Warps an instance patch onto its category template.
///
/// `polygon` is in patch coordinates and corresponds vertex-by-vertex with
/// the template points.
pub fn rectify_instance(
    patch: &RgbaImage,
    polygon: &[Point],
    category_id: u64,
    template: Option<&Template>,
) -> Result<Rectified> {
    let template = template.ok_or(Error::NoTemplate(category_id))?;
    if polygon.len() != template.points.len() {
        return Err(Error::InvalidInput(format!(
            "polygon has {} points but the template of category {category_id} has {}",
            polygon.len(),
            template.points.len()
        )));
    }
    let est = estimate_homography(polygon, &template.points)?;
    Ok(Rectified {
        patch: warp_perspective(patch, &est.homography, template.width, template.height),
        homography: est.homography,
        rms: est.rms,
    })
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(focal: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(focal > 0.0) {
            return Err(Error::InvalidInput(format!("focal must be > 0, got {focal}")));
        }
        Ok(Intrinsics { focal, cx, cy })
    }

    /// Default assumption: focal = max(width, height), principal point at `center`.
    pub fn assumed(image_width: u32, image_height: u32, center: Point) -> Self {
        Intrinsics {
            focal: image_width.max(image_height).max(1) as f64,
            cx: center.x,
            cy: center.y,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal, 0.0, self.cx, 0.0, self.focal, self.cy, 0.0, 0.0, 1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let f = self.focal;
        Matrix3::new(
            1.0 / f,
            0.0,
            -self.cx / f,
            0.0,
            1.0 / f,
            -self.cy / f,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Rotation angles in radians, applied as `R = Rz(rz) Ry(ry) Rx(rx)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct EulerAngles {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

impl EulerAngles {
    pub fn new(rx: f64, ry: f64, rz: f64) -> Self {
        EulerAngles {
            rx: wrap_angle(rx),
            ry: wrap_angle(ry),
            rz: wrap_angle(rz),
        }
    }

    pub fn from_degrees(rx: f64, ry: f64, rz: f64) -> Self {
        Self::new(rx.to_radians(), ry.to_radians(), rz.to_radians())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.rx, self.ry, self.rz]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let (sx, cx) = self.rx.sin_cos();
        let (sy, cy) = self.ry.sin_cos();
        let (sz, cz) = self.rz.sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
        let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
        let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
        rz * ry * rx
    }

    /// ZYX extraction from a proper rotation matrix.
    pub fn from_rotation_matrix(r: &Matrix3<f64>) -> Self {
        let s = -r[(2, 0)];
        if s.abs() >= 1.0 - 1e-12 {
            let ry = std::f64::consts::FRAC_PI_2.copysign(s);
            let rz = (-r[(0, 1)]).atan2(r[(1, 1)]);
            return Self::new(0.0, ry, rz);
        }
        Self::new(
            r[(2, 1)].atan2(r[(2, 2)]),
            s.asin(),
            r[(1, 0)].atan2(r[(0, 0)]),
        )
    }
}

/// Homography of a plane rotated by `angles` and placed `distance` units in
/// front of the camera, with plane coordinates centered on the optical axis:
/// `H = K [r1 r2 t]`, `t = (0, 0, distance)`.
pub fn compose_plane_homography(
    angles: &EulerAngles,
    k: &Intrinsics,
    distance: f64,
) -> Result<Homography> {
    let r = angles.rotation_matrix();
    let mut m = Matrix3::zeros();
    m.set_column(0, &r.column(0));
    m.set_column(1, &r.column(1));
    m.set_column(2, &Vector3::new(0.0, 0.0, distance));
    Homography::from_matrix(k.matrix() * m)
}

/// Camera pose of the plane recovered from a plane-to-image homography.
#[derive(Debug, Clone, Copy)]
pub struct PlanePose {
    pub angles: EulerAngles,
    pub rotation: Matrix3<f64>,
    /// Plane origin in camera coordinates, in plane units.
    pub translation: Vector3<f64>,
}

/// Recovers the rotation of a plane from a homography mapping plane
/// coordinates to image pixels.
///
/// `r1 = λK⁻¹h1`, `r2 = λK⁻¹h2` with `‖r1‖ = 1`, `r3 = r1 × r2`; the result
/// is projected onto the nearest rotation by SVD.
pub fn decompose_pose(h: &Homography, k: &Intrinsics) -> Result<PlanePose> {
    let b = k.inverse_matrix() * h.matrix();
    let norm1 = b.column(0).norm();
    if norm1 < 1e-15 {
        return Err(Error::Degenerate("homography has a null first column".into()));
    }
    let mut lambda = 1.0 / norm1;
    if (lambda * b.column(2)).z < 0.0 {
        lambda = -lambda;
    }
    let r1: Vector3<f64> = lambda * b.column(0);
    let r2: Vector3<f64> = lambda * b.column(1);
    let r3 = r1.cross(&r2);
    let mut m = Matrix3::zeros();
    m.set_column(0, &r1);
    m.set_column(1, &r2);
    m.set_column(2, &r3);

    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut rot = u * v_t;
    if rot.determinant() < 0.0 {
        let mut u = u;
        let c = -u.column(2);
        u.set_column(2, &c);
        rot = u * v_t;
    }
    let residual = (m - rot).norm();
    if !(residual <= MAX_ROTATION_RESIDUAL) {
        return Err(Error::Degenerate(format!(
            "homography is {residual:.3} (Frobenius) away from a rotation"
        )));
    }
    Ok(PlanePose {
        angles: EulerAngles::from_rotation_matrix(&rot),
        rotation: rot,
        translation: lambda * b.column(2),
    })
}

pub fn decompose_rotation(h: &Homography, k: &Intrinsics) -> Result<EulerAngles> {
    decompose_pose(h, k).map(|p| p.angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> Vec<Point> {
        vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ]
    }

    #[test]
    fn identity_from_identical_squares() {
        let sq = unit_square();
        let est = estimate_homography(&sq, &sq).unwrap();
        assert!(est.homography.approx_eq(&Homography::identity(), 1e-12));
        assert!(est.rms < 1e-12);
    }

    #[test]
    fn three_points_rejected() {
        let sq = unit_square();
        assert!(matches!(
            estimate_homography(&sq[..3], &sq[..3]),
            Err(Error::NotEnoughPoints { got: 3, .. })
        ));
    }

    #[test]
    fn collinear_quad_rejected() {
        let bad = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(2.0, 2.0),
            Point::new(0.0, 1.0),
        ];
        assert!(matches!(
            estimate_homography(&bad, &unit_square()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn recovers_synthetic_homography() {
        let truth = Homography::from_matrix(Matrix3::new(
            1.2, 0.1, 5.0, -0.05, 0.9, 3.0, 1e-3, -2e-3, 1.0,
        ))
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src: Vec<Point> = (0..8)
            .map(|_| Point::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
            .collect();
        let dst: Vec<Point> = src.iter().map(|p| truth.apply(*p)).collect();
        let est = estimate_homography(&src, &dst).unwrap();
        assert!(est.homography.approx_eq(&truth, 1e-10));
        assert!(est.rms < 1e-9);
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_rotation_decomposes_to_zero() {
        let k = Intrinsics::new(1000.0, 320.0, 240.0).unwrap();
        let h = compose_plane_homography(&EulerAngles::default(), &k, 500.0).unwrap();
        let a = decompose_rotation(&h, &k).unwrap();
        assert!(a.rx.abs() < 1e-12 && a.ry.abs() < 1e-12 && a.rz.abs() < 1e-12);
    }

    #[test]
    fn known_angles_round_trip() {
        let k = Intrinsics::new(1000.0, 500.0, 500.0).unwrap();
        let truth = EulerAngles::from_degrees(5.0, -10.0, 3.0);
        let h = compose_plane_homography(&truth, &k, 800.0).unwrap();
        let a = decompose_rotation(&h, &k).unwrap();
        for (x, y) in a.as_array().iter().zip(truth.as_array()) {
            assert!((x - y).abs() < 1e-6, "{a:?} vs {truth:?}");
        }
    }

    #[test]
    fn rank_deficient_matrix_rejected() {
        let m = Matrix3::new(1.0, 1.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Homography::from_matrix(m).is_err());
    }

    #[test]
    fn strong_shear_is_not_a_rotation() {
        let k = Intrinsics::new(1000.0, 0.0, 0.0).unwrap();
        let h = Homography::from_matrix(Matrix3::new(
            1000.0, 900.0, 0.0, 0.0, 300.0, 0.0, 0.0, 0.0, 1.0,
        ))
        .unwrap();
        assert!(matches!(decompose_rotation(&h, &k), Err(Error::Degenerate(_))));
    }

    fn checker(block: u32) -> RgbaImage {
        RgbaImage::from_fn(2 * block, 2 * block, |x, y| {
            if (x / block + y / block).is_multiple_of(2) {
                Rgba([255, 255, 255, 255])
            } else {
                Rgba([0, 0, 0, 255])
            }
        })
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = RgbaImage::from_fn(7, 5, |x, y| Rgba([(x * 30) as u8, (y * 40) as u8, 9, 255]));
        let out = warp_perspective(&img, &Homography::identity(), 7, 5);
        assert_eq!(out, img);
    }

    /// Closed-form bilinear resampling of a 1-pixel 2x2 checker upscaled by
    /// two: each output coordinate maps to source `(i + 0.5) / 2`, so the
    /// blend weight between the two source pixels is 0 on the outer ring and
    /// 0.25/0.75 on the inner one.
    #[test]
    fn two_times_upscale_of_checker() {
        let img = checker(1);
        let s = Homography::scaling(2.0, 2.0).unwrap();
        let out = warp_perspective(&img, &s, 4, 4);
        let weight = |i: u32| -> f64 {
            // fraction of the *second* source pixel along one axis
            let f = (i as f64 + 0.5) / 2.0 - 0.5;
            f.clamp(0.0, 1.0)
        };
        for v in 0..4 {
            for u in 0..4 {
                let (wx, wy) = (weight(u), weight(v));
                // white at (0,0) and (1,1)
                let white = (1.0 - wx) * (1.0 - wy) + wx * wy;
                let expected = (255.0 * white).round() as u8;
                assert_eq!(out.get_pixel(u, v).0[0], expected, "pixel ({u},{v})");
                assert_eq!(out.get_pixel(u, v).0[3], 255);
            }
        }
        // corners keep the pure block colour
        assert_eq!(out.get_pixel(0, 0).0[0], 255);
        assert_eq!(out.get_pixel(3, 0).0[0], 0);
    }

    #[test]
    fn quarter_turn_is_a_pixel_permutation() {
        let img = RgbaImage::from_fn(5, 3, |x, y| Rgba([(x * 50) as u8, (y * 100) as u8, 7, 255]));
        // (x, y) -> (3 - y, x): rotates the 5x3 image into 3x5
        let h = Homography::from_matrix(Matrix3::new(0.0, -1.0, 3.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0))
            .unwrap();
        let out = warp_perspective(&img, &h, 3, 5);
        for y in 0..3 {
            for x in 0..5 {
                assert_eq!(out.get_pixel(2 - y, x), img.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn outside_source_is_transparent() {
        let img = checker(2);
        let out = warp_perspective(&img, &Homography::translation(10.0, 0.0), 4, 4);
        assert!(out.pixels().all(|p| p.0[3] == 0));
    }

    #[test]
    fn rectify_without_template_is_an_error() {
        let img = checker(2);
        assert!(matches!(
            rectify_instance(&img, &unit_square(), 5, None),
            Err(Error::NoTemplate(5))
        ));
    }
}
