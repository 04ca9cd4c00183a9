//! Synthetic training images: distort normalized instances, place two to
//! five of them on a sign-free background without overlap and outside the
//! bottom-central road region, and blend them in.

use std::collections::{BTreeMap, HashSet, VecDeque};

use image::{Rgba, RgbaImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appearance::{apply_appearance_distortion, lab_to_srgb, srgb_to_lab, OPAQUE_ALPHA};
use crate::distortion::{sample_distortion, DistortionModel, DistortionSample};
use crate::error::{Error, Result};
use crate::geometry::{compose_plane_homography, warp_perspective, Homography, Intrinsics};
use crate::imageio::ImageSource;
use crate::model::{BBox, Dataset, ImageRecord, Instance, Point};
use crate::observe::{normalized_sources, translated_hull, NormalizedInstance};
use crate::seed::rng_for;

pub const MIN_SCALE: f64 = 15.0;
pub const MIN_PER_IMAGE: usize = 2;
pub const MAX_PER_IMAGE: usize = 5;
pub const MAX_ATTEMPTS: usize = 1000;
pub const DEFAULT_TARGET_MIN: usize = 200;
pub const DEFAULT_FOCAL: f64 = 1000.0;
const MIN_DEPTH: f64 = 1e-3;
const MAX_RESAMPLES: usize = 100;

/// A distorted instance ready for placement.
#[derive(Debug, Clone)]
pub struct SynthPatch {
    pub category_id: u64,
    pub source_instance: u64,
    pub image: RgbaImage,
    /// Polygon in patch coordinates.
    pub polygon: Vec<Point>,
    pub sample: DistortionSample,
}

/// Distorts one normalized instance.
///
/// With geometry, the patch is treated as a plane centered on the optical
/// axis at depth `focal` (so zero angles leave it unchanged), rotated by
/// `sample.angles`; without geometry only scale and appearance change. The
/// result is cropped to the polygon extent and resized so its larger side
/// equals `sample.scale`. Geometry and resize are one warp.
pub fn synthesize_instance(
    src: &NormalizedInstance,
    has_geometry: bool,
    sample: &DistortionSample,
    focal: f64,
) -> Result<SynthPatch> {
    if !(sample.scale >= MIN_SCALE) {
        return Err(Error::RejectedSample(format!(
            "scale {:.2} below {MIN_SCALE}",
            sample.scale
        )));
    }
    let (w, h) = src.patch.dimensions();
    let geometric = if has_geometry {
        let k = Intrinsics::new(focal, 0.0, 0.0)?;
        let plane = compose_plane_homography(&sample.angles, &k, focal)?;
        let r = sample.angles.rotation_matrix();
        let centered = |p: Point| (p.x - w as f64 / 2.0, p.y - h as f64 / 2.0);
        for p in &src.polygon {
            let (x, y) = centered(*p);
            if r[(2, 0)] * x + r[(2, 1)] * y + focal < MIN_DEPTH * focal {
                return Err(Error::RejectedSample("polygon behind the camera".into()));
            }
        }
        Homography::translation(-(w as f64) / 2.0, -(h as f64) / 2.0).then(&plane)
    } else {
        Homography::identity()
    };
    let moved: Vec<Point> = src.polygon.iter().map(|p| geometric.apply(*p)).collect();
    let extent = BBox::hull(&moved);
    let larger = extent.w.max(extent.h);
    if !(larger > 1e-9) || !larger.is_finite() {
        return Err(Error::RejectedSample("polygon collapsed".into()));
    }
    let s = sample.scale / larger;
    let to_patch = geometric
        .then(&Homography::translation(-extent.x, -extent.y))
        .then(&Homography::scaling(s, s)?);
    let out_w = (extent.w * s).ceil().max(1.0) as u32;
    let out_h = (extent.h * s).ceil().max(1.0) as u32;
    let warped = warp_perspective(&src.patch, &to_patch, out_w, out_h);
    let lab = srgb_to_lab(&warped);
    let distorted = match apply_appearance_distortion(&lab, sample.brightness_mean, sample.contrast_scale) {
        Ok(p) => p,
        Err(Error::InvalidInput(msg)) => return Err(Error::RejectedSample(msg)),
        Err(e) => return Err(e),
    };
    Ok(SynthPatch {
        category_id: src.category_id,
        source_instance: src.instance_id,
        image: lab_to_srgb(&distorted),
        polygon: src.polygon.iter().map(|p| to_patch.apply(*p)).collect(),
        sample: *sample,
    })
}

/// Horizontal middle third by vertical bottom third.
pub fn exclusion_region(width: u32, height: u32) -> BBox {
    let (w, h) = (width as f64, height as f64);
    BBox::new(w / 3.0, 2.0 * h / 3.0, w / 3.0, h / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Index into the patches handed to [`place_instances`].
    pub patch: usize,
    /// Top-left corner of the patch.
    pub position: (u32, u32),
    pub patch_size: (u32, u32),
    /// Hull of the placed polygon: the emitted instance bbox.
    pub bbox: BBox,
}

impl Placement {
    pub fn rect(&self) -> BBox {
        BBox::new(
            self.position.0 as f64,
            self.position.1 as f64,
            self.patch_size.0 as f64,
            self.patch_size.1 as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeSpec {
    pub background_id: u64,
    pub width: u32,
    pub height: u32,
    pub placements: Vec<Placement>,
    pub exclusion: BBox,
}

impl CompositeSpec {
    /// Count, bounds, pairwise non-overlap and exclusion, checked on both
    /// the patch rectangles and the instance boxes.
    pub fn validate(&self) -> Result<()> {
        let n = self.placements.len();
        if !(MIN_PER_IMAGE..=MAX_PER_IMAGE).contains(&n) {
            return Err(Error::Placement(format!("{n} placements")));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for (i, p) in self.placements.iter().enumerate() {
            for b in [p.rect(), p.bbox] {
                if b.x < 0.0 || b.y < 0.0 || b.right() > w || b.bottom() > h {
                    return Err(Error::Placement(format!("placement {i} leaves the image")));
                }
                if b.intersection_area(&self.exclusion) > 0.0 {
                    return Err(Error::Placement(format!("placement {i} enters the exclusion region")));
                }
            }
            for (j, q) in self.placements.iter().enumerate().skip(i + 1) {
                if p.rect().intersection_area(&q.rect()) > 0.0 {
                    return Err(Error::Placement(format!("placements {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Placed {
    pub spec: CompositeSpec,
    /// Patches that found no position within the attempt budget.
    pub deferred: Vec<usize>,
}

/// Rejection-samples integer positions for `patches` on `background`.
pub fn place_instances<R: Rng + ?Sized>(
    background: &ImageRecord,
    patches: &[SynthPatch],
    rng: &mut R,
) -> Result<Placed> {
    if !(MIN_PER_IMAGE..=MAX_PER_IMAGE).contains(&patches.len()) {
        return Err(Error::Placement(format!(
            "{} patches requested; between {MIN_PER_IMAGE} and {MAX_PER_IMAGE} go on one background",
            patches.len()
        )));
    }
    let (bw, bh) = (background.width, background.height);
    for p in patches {
        let (pw, ph) = p.image.dimensions();
        if pw > bw || ph > bh {
            return Err(Error::Placement(format!(
                "patch {pw}x{ph} larger than background {} ({bw}x{bh})",
                background.id
            )));
        }
    }
    let exclusion = exclusion_region(bw, bh);
    let mut placements: Vec<Placement> = Vec::new();
    let mut deferred = Vec::new();
    for (i, p) in patches.iter().enumerate() {
        let (pw, ph) = p.image.dimensions();
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let x = rng.gen_range(0..=bw - pw);
            let y = rng.gen_range(0..=bh - ph);
            let candidate = Placement {
                patch: i,
                position: (x, y),
                patch_size: (pw, ph),
                bbox: translated_hull(&p.polygon, (x as f64, y as f64)),
            };
            let rect = candidate.rect();
            if rect.intersection_area(&exclusion) > 0.0 {
                continue;
            }
            if placements.iter().any(|q| q.rect().intersection_area(&rect) > 0.0) {
                continue;
            }
            placements.push(candidate);
            placed = true;
            break;
        }
        if !placed {
            deferred.push(i);
        }
    }
    if placements.len() < MIN_PER_IMAGE {
        return Err(Error::Placement(format!(
            "only {} of {} patches fit on background {}",
            placements.len(),
            patches.len(),
            background.id
        )));
    }
    Ok(Placed {
        spec: CompositeSpec {
            background_id: background.id,
            width: bw,
            height: bh,
            placements,
            exclusion,
        },
        deferred,
    })
}

/// Alpha of each patch pixel after feathering: opaque pixels on the mask
/// boundary (a 4-neighbour is not opaque, or the patch edge) get half their
/// alpha; interior pixels are copied unchanged.
fn feathered_alpha(patch: &RgbaImage) -> Vec<f64> {
    let (w, h) = patch.dimensions();
    let opaque = |x: i64, y: i64| {
        x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && patch.get_pixel(x as u32, y as u32)[3] >= OPAQUE_ALPHA
    };
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let a = patch.get_pixel(x as u32, y as u32)[3] as f64 / 255.0;
            let edge = opaque(x, y)
                && !(opaque(x - 1, y) && opaque(x + 1, y) && opaque(x, y - 1) && opaque(x, y + 1));
            out.push(if edge { 0.5 * a } else { a });
        }
    }
    out
}

/// Blends the placed patches over `background` and emits their instances,
/// ids starting at `first_instance_id`.
pub fn composite(
    background: &RgbaImage,
    spec: &CompositeSpec,
    patches: &[SynthPatch],
    image: &ImageRecord,
    first_instance_id: u64,
) -> (RgbaImage, Vec<Instance>) {
    let mut out = background.clone();
    let mut instances = Vec::with_capacity(spec.placements.len());
    for (k, pl) in spec.placements.iter().enumerate() {
        let p = &patches[pl.patch];
        let alpha = feathered_alpha(&p.image);
        let (pw, ph) = p.image.dimensions();
        for y in 0..ph {
            for x in 0..pw {
                let a = alpha[(y * pw + x) as usize];
                if a <= 0.0 {
                    continue;
                }
                let (ox, oy) = (pl.position.0 + x, pl.position.1 + y);
                let src = p.image.get_pixel(x, y);
                let dst = out.get_pixel_mut(ox, oy);
                if a >= 1.0 {
                    *dst = Rgba([src[0], src[1], src[2], 255]);
                    continue;
                }
                for c in 0..3 {
                    dst[c] = (a * src[c] as f64 + (1.0 - a) * dst[c] as f64)
                        .round()
                        .clamp(0.0, 255.0) as u8;
                }
                dst[3] = (255.0 * a + (1.0 - a) * dst[3] as f64).round().min(255.0) as u8;
            }
        }
        let polygon: Vec<Point> = p
            .polygon
            .iter()
            .map(|q| Point::new(q.x + pl.position.0 as f64, q.y + pl.position.1 as f64))
            .collect();
        instances.push(Instance::from_polygon(
            first_instance_id + k as u64,
            image,
            p.category_id,
            polygon,
        ));
    }
    (out, instances)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentOptions {
    pub target_min: usize,
    pub seed: u64,
    pub focal: f64,
    pub first_image_id: u64,
    pub first_instance_id: u64,
    /// Composites rendered per parallel chunk before handing them to the sink.
    pub chunk: usize,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            target_min: DEFAULT_TARGET_MIN,
            seed: 0,
            focal: DEFAULT_FOCAL,
            first_image_id: 1_000_000,
            first_instance_id: 1_000_000,
            chunk: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentResult {
    /// New images and instances, with the training categories.
    pub delta: Dataset,
    pub composites: Vec<CompositeSpec>,
    /// Synthetic instances per category.
    pub synthesized: BTreeMap<u64, usize>,
}

pub fn synthetic_uri(image_id: u64) -> String {
    format!("synthetic/{image_id:06}.png")
}

struct Job {
    category_id: u64,
    source: usize,
}

fn synthesize_job(
    job_index: usize,
    job: &Job,
    sources: &[NormalizedInstance],
    has_geometry: bool,
    model: &DistortionModel,
    max_scale: f64,
    opts: &AugmentOptions,
) -> Result<SynthPatch> {
    let mut rng = rng_for(opts.seed, &format!("augment/instance/{job_index}"));
    let src = &sources[job.source];
    for _ in 0..MAX_RESAMPLES {
        let sample = sample_distortion(model, job.category_id, &mut rng)?;
        if sample.scale > max_scale {
            continue;
        }
        match synthesize_instance(src, has_geometry, &sample, opts.focal) {
            Ok(p) => {
                let (w, h) = p.image.dimensions();
                if w as f64 <= max_scale && h as f64 <= max_scale {
                    return Ok(p);
                }
            }
            Err(Error::RejectedSample(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::RejectedSample(format!(
        "no acceptable distortion for instance {} after {MAX_RESAMPLES} draws",
        src.instance_id
    )))
}

/// Tops up every category below `opts.target_min` with synthetic instances.
///
/// Jobs are planned round-robin over deficient categories, each job draws
/// its distortion from its own derived stream, and composites are rendered
/// in parallel chunks, so the output does not depend on the thread count.
/// Rendered images go to `sink` in id order.
pub fn augment_dataset(
    train: &Dataset,
    source: &dyn ImageSource,
    backgrounds: &[ImageRecord],
    background_source: &dyn ImageSource,
    model: &DistortionModel,
    opts: &AugmentOptions,
    sink: &mut dyn FnMut(&ImageRecord, &RgbaImage) -> Result<()>,
) -> Result<AugmentResult> {
    if backgrounds.is_empty() {
        return Err(Error::InvalidInput("no background images".into()));
    }
    let counts = train.instance_counts();
    let mut deficit: BTreeMap<u64, usize> = BTreeMap::new();
    for c in &train.categories {
        let n = counts.get(&c.id).copied().unwrap_or(0);
        if n < opts.target_min {
            deficit.insert(c.id, opts.target_min - n);
        }
    }
    let mut delta = Dataset {
        categories: train.categories.clone(),
        ..Default::default()
    };
    if deficit.is_empty() {
        return Ok(AugmentResult {
            delta,
            composites: Vec::new(),
            synthesized: BTreeMap::new(),
        });
    }

    let wanted: HashSet<u64> = deficit.keys().copied().collect();
    let sources = normalized_sources(train, source, &wanted)?;
    let mut by_category: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, s) in sources.iter().enumerate() {
        by_category.entry(s.category_id).or_default().push(i);
    }
    for &c in deficit.keys() {
        if !by_category.contains_key(&c) {
            return Err(Error::InvalidInput(format!(
                "category {c} has no usable source instance"
            )));
        }
    }
    let geometry: BTreeMap<u64, bool> = train.categories.iter().map(|c| (c.id, c.has_geometry)).collect();
    let smallest_bg = backgrounds.iter().map(|b| b.width.min(b.height)).min().unwrap_or(0);
    let max_scale = smallest_bg as f64 / 2.0;

    let mut plan_rng = rng_for(opts.seed, "augment/plan");
    let mut remaining = deficit.clone();
    let mut jobs: Vec<Job> = Vec::new();
    while remaining.values().any(|&r| r > 0) {
        for (&c, r) in remaining.iter_mut() {
            if *r > 0 {
                let pool = &by_category[&c];
                jobs.push(Job {
                    category_id: c,
                    source: pool[plan_rng.gen_range(0..pool.len())],
                });
                *r -= 1;
            }
        }
    }
    if jobs.len() < MIN_PER_IMAGE {
        let c = jobs[0].category_id;
        let pool = &by_category[&c];
        jobs.push(Job {
            category_id: c,
            source: pool[plan_rng.gen_range(0..pool.len())],
        });
    }
    log::info!(
        "synthesizing {} instances for {} categories from {} sources",
        jobs.len(),
        deficit.len(),
        sources.len()
    );

    let patches: Vec<SynthPatch> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, job)| synthesize_job(i, job, &sources, geometry[&job.category_id], model, max_scale, opts))
        .collect::<Result<_>>()?;

    // Batching and placement are sequential: deferred patches move on to
    // the next background.
    let mut batch_rng = rng_for(opts.seed, "augment/batch");
    let mut queue: VecDeque<usize> = (0..patches.len()).collect();
    let mut plans: Vec<(ImageRecord, CompositeSpec, Vec<usize>)> = Vec::new();
    let mut bg_cursor = 0usize;
    let mut failures = 0usize;
    let mut attempt = 0usize;
    while !queue.is_empty() {
        let rem = queue.len();
        let mut k = if rem <= MAX_PER_IMAGE {
            rem
        } else {
            batch_rng.gen_range(MIN_PER_IMAGE..=MAX_PER_IMAGE)
        };
        if rem - k == 1 {
            k = if k < MAX_PER_IMAGE { k + 1 } else { k - 1 };
        }
        let batch: Vec<usize> = queue.drain(..k).collect();
        let bg = &backgrounds[bg_cursor % backgrounds.len()];
        bg_cursor += 1;
        let batch_patches: Vec<SynthPatch> = batch.iter().map(|&i| patches[i].clone()).collect();
        let mut rng = rng_for(opts.seed, &format!("augment/place/{attempt}"));
        attempt += 1;
        match place_instances(bg, &batch_patches, &mut rng) {
            Ok(placed) => {
                failures = 0;
                for &d in placed.deferred.iter().rev() {
                    queue.push_front(batch[d]);
                }
                let image = ImageRecord {
                    id: opts.first_image_id + plans.len() as u64,
                    width: bg.width,
                    height: bg.height,
                    uri: String::new(),
                    geotag: None,
                };
                let mut spec = placed.spec;
                // placement indices refer to the global patch list from here on
                for p in &mut spec.placements {
                    p.patch = batch[p.patch];
                }
                plans.push((image, spec, batch));
            }
            Err(Error::Placement(msg)) => {
                failures += 1;
                if failures > backgrounds.len() {
                    return Err(Error::Placement(format!("no background accepts the batch: {msg}")));
                }
                for &i in batch.iter().rev() {
                    queue.push_front(i);
                }
            }
            Err(e) => return Err(e),
        }
        // a lone deferred patch gets a partner from its own category
        if queue.len() == 1 {
            let first = &patches[queue[0]];
            let extra = patches
                .iter()
                .position(|p| p.category_id == first.category_id && !std::ptr::eq(p, first))
                .unwrap_or(queue[0]);
            queue.push_back(extra);
        }
    }

    let mut next_instance = opts.first_instance_id;
    let mut first_ids = Vec::with_capacity(plans.len());
    for (_, spec, _) in &plans {
        first_ids.push(next_instance);
        next_instance += spec.placements.len() as u64;
    }
    let mut synthesized: BTreeMap<u64, usize> = BTreeMap::new();
    let mut composites = Vec::with_capacity(plans.len());
    let chunk = opts.chunk.max(1);
    for (chunk_index, group) in plans.chunks(chunk).enumerate() {
        let rendered: Vec<(ImageRecord, RgbaImage, Vec<Instance>)> = group
            .par_iter()
            .enumerate()
            .map(|(j, (image, spec, _))| {
                let bg_record = backgrounds
                    .iter()
                    .find(|b| b.id == spec.background_id)
                    .expect("background of a plan");
                let bg = background_source.load(bg_record)?;
                if bg.dimensions() != (bg_record.width, bg_record.height) {
                    return Err(Error::Integrity(format!(
                        "background {} is {:?}, record says {}x{}",
                        bg_record.id,
                        bg.dimensions(),
                        bg_record.width,
                        bg_record.height
                    )));
                }
                let mut image = image.clone();
                image.uri = synthetic_uri(image.id);
                let (img, instances) =
                    composite(&bg, spec, &patches, &image, first_ids[chunk_index * chunk + j]);
                Ok((image, img, instances))
            })
            .collect::<Result<_>>()?;
        for ((image, img, instances), (_, spec, _)) in rendered.into_iter().zip(group) {
            sink(&image, &img)?;
            for inst in &instances {
                *synthesized.entry(inst.category_id).or_default() += 1;
            }
            delta.images.push(image);
            delta.instances.extend(instances);
            composites.push(spec.clone());
        }
    }
    Ok(AugmentResult {
        delta,
        composites,
        synthesized,
    })
}

/// Independent check of a composite against its emitted instances: 2 to 5
/// instances, boxes inside the image, pairwise disjoint, clear of the
/// exclusion region.
pub fn check_composite(image: &ImageRecord, instances: &[&Instance]) -> Result<()> {
    let n = instances.len();
    if !(MIN_PER_IMAGE..=MAX_PER_IMAGE).contains(&n) {
        return Err(Error::Placement(format!("image {} has {n} instances", image.id)));
    }
    let excl = exclusion_region(image.width, image.height);
    for (i, a) in instances.iter().enumerate() {
        let b = a.bbox;
        if b.x < 0.0 || b.y < 0.0 || b.right() > image.width as f64 || b.bottom() > image.height as f64 {
            return Err(Error::Placement(format!("instance {} leaves image {}", a.id, image.id)));
        }
        if b.intersection_area(&excl) > 0.0 {
            return Err(Error::Placement(format!("instance {} enters the exclusion region", a.id)));
        }
        for other in &instances[i + 1..] {
            if b.intersection_area(&other.bbox) > 0.0 {
                return Err(Error::Placement(format!("instances {} and {} overlap", a.id, other.id)));
            }
        }
    }
    Ok(())
}
