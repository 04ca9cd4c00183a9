//! Per-instance measurements and normalized source patches extracted from
//! annotated images.

use std::collections::{BTreeMap, HashSet};

use image::{Rgba, RgbaImage};
use rayon::prelude::*;

use crate::appearance::{lab_to_srgb, mean_intensity, normalize_contrast, srgb_to_lab};
use crate::distortion::InstanceObservation;
use crate::error::{Error, Result};
use crate::geometry::{decompose_pose, estimate_homography, rectify_instance, Intrinsics};
use crate::imageio::ImageSource;
use crate::model::{BBox, Category, Dataset, ImageRecord, Instance, Point};

/// An instance cut out of its image: pixels outside the polygon are
/// transparent.
#[derive(Debug, Clone)]
pub struct InstancePatch {
    pub instance_id: u64,
    pub category_id: u64,
    pub patch: RgbaImage,
    /// Polygon in patch coordinates.
    pub polygon: Vec<Point>,
    /// Top-left of the patch in the image.
    pub offset: (u32, u32),
}

/// Even-odd test.
pub fn point_in_polygon(p: Point, polygon: &[Point]) -> bool {
    let mut inside = false;
    let n = polygon.len();
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + n - 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn crop_instance(img: &RgbaImage, inst: &Instance) -> Result<InstancePatch> {
    let (w, h) = img.dimensions();
    let b = inst.bbox;
    let x0 = b.x.floor().clamp(0.0, w as f64) as u32;
    let y0 = b.y.floor().clamp(0.0, h as f64) as u32;
    let x1 = b.right().ceil().clamp(0.0, w as f64) as u32;
    let y1 = b.bottom().ceil().clamp(0.0, h as f64) as u32;
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::InvalidInput(format!(
            "instance {} lies outside its image",
            inst.id
        )));
    }
    let polygon: Vec<Point> = inst
        .polygon
        .iter()
        .map(|p| Point::new(p.x - x0 as f64, p.y - y0 as f64))
        .collect();
    let patch = RgbaImage::from_fn(x1 - x0, y1 - y0, |x, y| {
        let Rgba([r, g, bl, a]) = *img.get_pixel(x0 + x, y0 + y);
        let center = Point::new(x as f64 + 0.5, y as f64 + 0.5);
        if point_in_polygon(center, &polygon) {
            Rgba([r, g, bl, a])
        } else {
            Rgba([0, 0, 0, 0])
        }
    });
    Ok(InstancePatch {
        instance_id: inst.id,
        category_id: inst.category_id,
        patch,
        polygon,
        offset: (x0, y0),
    })
}

/// Whether geometry can be measured: the category has geometry and a
/// template whose vertices correspond with the polygon's.
pub fn geometry_usable(category: &Category, inst: &Instance) -> bool {
    category.has_geometry
        && category
            .template
            .as_ref()
            .is_some_and(|t| t.points.len() == inst.polygon.len())
}

/// Brightness of the raw instance, plus pose and rectified size when the
/// geometry is usable. Without geometry the size is `sqrt(w * h)` of the box.
pub fn observe_instance(
    image: &ImageRecord,
    category: &Category,
    inst: &Instance,
    patch: &InstancePatch,
) -> Result<InstanceObservation> {
    let brightness = mean_intensity(&srgb_to_lab(&patch.patch))?;
    let fallback_size = (inst.bbox.w * inst.bbox.h).sqrt();
    let mut obs = InstanceObservation {
        category_id: inst.category_id,
        angles: None,
        size: Some(fallback_size),
        brightness,
    };
    if !geometry_usable(category, inst) {
        return Ok(obs);
    }
    let template = category.template.as_ref().expect("checked");
    let to_template = estimate_homography(&inst.polygon, &template.points)?;
    let k = Intrinsics::assumed(image.width, image.height, inst.bbox.center());
    match decompose_pose(&to_template.homography.inverse(), &k) {
        Ok(pose) if pose.translation.z > 0.0 => {
            let side = (template.width as f64 * template.height as f64).sqrt();
            obs.angles = Some(pose.angles);
            obs.size = Some(side * k.focal / pose.translation.z);
        }
        Ok(_) | Err(Error::Degenerate(_)) => {
            log::debug!("instance {}: pose not recoverable, using box size", inst.id);
        }
        Err(e) => return Err(e),
    }
    Ok(obs)
}

fn by_image(ds: &Dataset, keep: impl Fn(&Instance) -> bool) -> BTreeMap<u64, Vec<&Instance>> {
    let mut map: BTreeMap<u64, Vec<&Instance>> = BTreeMap::new();
    for inst in ds.instances.iter().filter(|i| keep(i)) {
        map.entry(inst.image_id).or_default().push(inst);
    }
    map
}

/// Observations for every non-difficult instance, ordered by instance id.
/// Images are loaded in parallel.
pub fn observe_dataset(ds: &Dataset, source: &dyn ImageSource) -> Result<Vec<InstanceObservation>> {
    let images = ds.image_index();
    let categories = ds.category_index();
    let groups: Vec<(u64, Vec<&Instance>)> = by_image(ds, |i| !i.difficult).into_iter().collect();
    let per_image: Vec<Vec<(u64, InstanceObservation)>> = groups
        .par_iter()
        .map(|(image_id, insts)| {
            let record = images[image_id];
            let img = source.load(record)?;
            insts
                .iter()
                .map(|inst| {
                    let cat = categories
                        .get(&inst.category_id)
                        .ok_or(Error::UnknownCategory(inst.category_id))?;
                    let patch = crop_instance(&img, inst)?;
                    Ok((inst.id, observe_instance(record, cat, inst, &patch)?))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<(u64, InstanceObservation)> = per_image.into_iter().flatten().collect();
    all.sort_by_key(|(id, _)| *id);
    Ok(all.into_iter().map(|(_, o)| o).collect())
}

/// A source for synthesis: rectified onto the template when the geometry
/// is usable, contrast-normalized, polygon in patch coordinates.
#[derive(Debug, Clone)]
pub struct NormalizedInstance {
    pub instance_id: u64,
    pub category_id: u64,
    pub patch: RgbaImage,
    pub polygon: Vec<Point>,
    pub rectified: bool,
}

pub fn normalize_instance(category: &Category, inst: &Instance, crop: &InstancePatch) -> Result<NormalizedInstance> {
    let (patch, polygon, rectified) = if geometry_usable(category, inst) {
        let template = category.template.as_ref().expect("checked");
        let r = rectify_instance(&crop.patch, &crop.polygon, category.id, Some(template))?;
        (r.patch, template.points.clone(), true)
    } else {
        (crop.patch.clone(), crop.polygon.clone(), false)
    };
    let normalized = normalize_contrast(&srgb_to_lab(&patch));
    Ok(NormalizedInstance {
        instance_id: inst.id,
        category_id: inst.category_id,
        patch: lab_to_srgb(&normalized.patch),
        polygon,
        rectified,
    })
}

/// Normalized sources for the non-difficult instances of `categories`,
/// ordered by instance id. Instances whose rectification fails are skipped
/// with a warning.
pub fn normalized_sources(
    ds: &Dataset,
    source: &dyn ImageSource,
    categories: &HashSet<u64>,
) -> Result<Vec<NormalizedInstance>> {
    let images = ds.image_index();
    let cats = ds.category_index();
    let groups: Vec<(u64, Vec<&Instance>)> =
        by_image(ds, |i| !i.difficult && categories.contains(&i.category_id))
            .into_iter()
            .collect();
    let per_image: Vec<Vec<NormalizedInstance>> = groups
        .par_iter()
        .map(|(image_id, insts)| {
            let img = source.load(images[image_id])?;
            let mut out = Vec::new();
            for inst in insts {
                let cat = cats
                    .get(&inst.category_id)
                    .ok_or(Error::UnknownCategory(inst.category_id))?;
                let crop = crop_instance(&img, inst)?;
                match normalize_instance(cat, inst, &crop) {
                    Ok(n) => out.push(n),
                    Err(Error::Degenerate(msg)) => {
                        log::warn!("instance {} skipped: {msg}", inst.id)
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<NormalizedInstance> = per_image.into_iter().flatten().collect();
    all.sort_by_key(|n| n.instance_id);
    Ok(all)
}

/// Hull of `polygon` translated by `offset`.
pub fn translated_hull(polygon: &[Point], offset: (f64, f64)) -> BBox {
    let moved: Vec<Point> = polygon
        .iter()
        .map(|p| Point::new(p.x + offset.0, p.y + offset.1))
        .collect();
    BBox::hull(&moved)
}
