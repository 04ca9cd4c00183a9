//! Small procedurally drawn corpora for examples, tests and benchmarks.
//!
//! [`toy_corpus`] draws street-like scenes with perspective-warped signs of
//! five categories (three with templates, two arrow shapes without
//! geometry) plus sign-free backgrounds. [`geotagged_metadata`] produces
//! annotation-only datasets with drive-like geotags for split experiments,
//! and [`simulated_detections`] / [`simulated_proposals`] stand in for a
//! trained detector.

use std::collections::BTreeMap;

use image::{Rgba, RgbaImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::eval::Detection;
use crate::geometry::{compose_plane_homography, warp_perspective, EulerAngles, Homography, Intrinsics};
use crate::error::Result;
use crate::imageio::{write_png, MemoryImageSource};
use crate::model::{save_dataset, BBox, Category, Dataset, Geotag, ImageRecord, Instance, Point, Template};
use crate::observe::point_in_polygon;
use crate::roi::{RoiCandidate, RoiLabel};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyOptions {
    pub seed: u64,
    /// Instances per category, categories numbered from 1.
    pub counts: Vec<usize>,
    pub width: u32,
    pub height: u32,
    pub backgrounds: usize,
}

impl Default for ToyOptions {
    fn default() -> Self {
        ToyOptions {
            seed: 7,
            counts: vec![30, 70, 110, 150, 180],
            width: 400,
            height: 300,
            backgrounds: 50,
        }
    }
}

pub struct ToyCorpus {
    pub dataset: Dataset,
    pub images: MemoryImageSource,
    pub backgrounds: Vec<ImageRecord>,
    pub background_images: MemoryImageSource,
}

impl ToyCorpus {
    /// Writes `annotations.json`, the scenes under `scene/` and the
    /// backgrounds under `background/`, so the corpus can be fed to the CLI.
    pub fn write_to(&self, dir: &std::path::Path) -> Result<()> {
        save_dataset(&self.dataset, dir.join("annotations.json"))?;
        for (uri, img) in self.images.images.iter().chain(&self.background_images.images) {
            write_png(&dir.join(uri), img)?;
        }
        Ok(())
    }
}

struct Design {
    name: &'static str,
    /// Polygon in design coordinates, also the template when `template`.
    polygon: Vec<Point>,
    size: (u32, u32),
    template: bool,
    fill: [u8; 3],
}

fn designs() -> Vec<Design> {
    let octagon: Vec<Point> = (0..8)
        .map(|k| {
            let a = std::f64::consts::PI / 8.0 + k as f64 * std::f64::consts::PI / 4.0;
            Point::new(24.0 + 24.0 * a.cos(), 24.0 + 24.0 * a.sin())
        })
        .collect();
    let arrow = |flip: bool| -> Vec<Point> {
        let pts = [
            (0.0, 12.0),
            (30.0, 12.0),
            (30.0, 0.0),
            (48.0, 18.0),
            (30.0, 36.0),
            (30.0, 24.0),
            (0.0, 24.0),
        ];
        pts.iter()
            .map(|&(x, y)| Point::new(if flip { 48.0 - x } else { x }, y))
            .collect()
    };
    vec![
        Design {
            name: "square-blue",
            polygon: vec![
                Point::new(0.0, 0.0),
                Point::new(48.0, 0.0),
                Point::new(48.0, 48.0),
                Point::new(0.0, 48.0),
            ],
            size: (48, 48),
            template: true,
            fill: [30, 70, 200],
        },
        Design {
            name: "octagon-red",
            polygon: octagon,
            size: (48, 48),
            template: true,
            fill: [200, 30, 30],
        },
        Design {
            name: "rect-green",
            polygon: vec![
                Point::new(0.0, 0.0),
                Point::new(64.0, 0.0),
                Point::new(64.0, 36.0),
                Point::new(0.0, 36.0),
            ],
            size: (64, 36),
            template: true,
            fill: [30, 140, 60],
        },
        Design {
            name: "arrow-right",
            polygon: arrow(false),
            size: (48, 36),
            template: false,
            fill: [240, 240, 240],
        },
        Design {
            name: "arrow-left",
            polygon: arrow(true),
            size: (48, 36),
            template: false,
            fill: [240, 200, 40],
        },
    ]
}

/// Flat sign face with a white inner frame and a dark center mark.
fn render_design(d: &Design) -> RgbaImage {
    let (w, h) = d.size;
    RgbaImage::from_fn(w, h, |x, y| {
        let c = Point::new(x as f64 + 0.5, y as f64 + 0.5);
        if !point_in_polygon(c, &d.polygon) {
            return Rgba([0, 0, 0, 0]);
        }
        let (u, v) = (c.x / w as f64, c.y / h as f64);
        let frame = (0.12..0.2).contains(&u) || (0.8..0.88).contains(&u) || (0.12..0.2).contains(&v) || (0.8..0.88).contains(&v);
        let mark = (0.4..0.6).contains(&u) && (0.4..0.6).contains(&v);
        let [r, g, b] = if mark {
            [20, 20, 20]
        } else if frame && d.template {
            [250, 250, 250]
        } else {
            d.fill
        };
        Rgba([r, g, b, 255])
    })
}

/// Road-scene-like backdrop: sky gradient, darker ground, pixel noise.
fn render_backdrop<R: Rng>(w: u32, h: u32, rng: &mut R) -> RgbaImage {
    let sky = [rng.gen_range(120..190u8), rng.gen_range(150..210u8), rng.gen_range(190..250u8)];
    let ground = [rng.gen_range(60..110u8), rng.gen_range(60..110u8), rng.gen_range(50..100u8)];
    let horizon = rng.gen_range(0.35..0.55) * h as f64;
    let mut img = RgbaImage::new(w, h);
    for (_, y, px) in img.enumerate_pixels_mut() {
        let base = if (y as f64) < horizon { sky } else { ground };
        let shade = 1.0 - 0.25 * (y as f64 / h as f64);
        let noise: i32 = rng.gen_range(-6..=6);
        let ch = |c: u8| ((c as f64 * shade) as i32 + noise).clamp(0, 255) as u8;
        *px = Rgba([ch(base[0]), ch(base[1]), ch(base[2]), 255]);
    }
    img
}

fn blend_at(dst: &mut RgbaImage, src: &RgbaImage, ox: i64, oy: i64, gain: f64) {
    let (dw, dh) = dst.dimensions();
    for (x, y, p) in src.enumerate_pixels() {
        let (tx, ty) = (ox + x as i64, oy + y as i64);
        if p[3] == 0 || tx < 0 || ty < 0 || tx >= dw as i64 || ty >= dh as i64 {
            continue;
        }
        let a = p[3] as f64 / 255.0;
        let d = dst.get_pixel_mut(tx as u32, ty as u32);
        for c in 0..3 {
            let s = (p[c] as f64 * gain).min(255.0);
            d[c] = (a * s + (1.0 - a) * d[c] as f64).round() as u8;
        }
    }
}

fn template_of(d: &Design) -> Option<Template> {
    d.template.then(|| Template {
        points: d.polygon.clone(),
        width: d.size.0,
        height: d.size.1,
    })
}

pub fn toy_categories() -> Vec<Category> {
    designs()
        .iter()
        .enumerate()
        .map(|(i, d)| Category {
            id: i as u64 + 1,
            name: d.name.to_string(),
            template: template_of(d),
            has_geometry: d.template,
        })
        .collect()
}

/// Draws the corpus. Deterministic in `opts`.
pub fn toy_corpus(opts: &ToyOptions) -> ToyCorpus {
    let designs = designs();
    let faces: Vec<RgbaImage> = designs.iter().map(render_design).collect();
    let mut categories = toy_categories();
    categories.truncate(opts.counts.len().min(designs.len()));
    let mut rng = rng_for(opts.seed, "toy/scenes");
    let angle = Normal::new(0.0, 12f64.to_radians()).expect("sigma > 0");
    let roll = Normal::new(0.0, 4f64.to_radians()).expect("sigma > 0");
    let (w, h) = (opts.width, opts.height);
    let focal = w.max(h) as f64;

    let mut remaining: Vec<usize> = opts.counts.iter().take(categories.len()).copied().collect();
    let mut ds = Dataset {
        categories,
        ..Default::default()
    };
    let mut images = MemoryImageSource::default();
    let mut position = Geotag {
        easting: 0.0,
        northing: 0.0,
    };
    let mut next_instance = 1u64;
    while remaining.iter().any(|&r| r > 0) {
        let id = ds.images.len() as u64 + 1;
        // drive: short steps with occasional jumps
        let step = if rng.gen_bool(0.2) { rng.gen_range(150.0..400.0) } else { rng.gen_range(8.0..35.0) };
        position.easting += step;
        position.northing += rng.gen_range(-5.0..5.0);
        let record = ImageRecord {
            id,
            width: w,
            height: h,
            uri: format!("scene/{id:05}.png"),
            geotag: Some(position),
        };
        let mut img = render_backdrop(w, h, &mut rng);
        let mut taken: Vec<BBox> = Vec::new();
        let signs = rng.gen_range(1..=4usize);
        for _ in 0..signs {
            let open: Vec<usize> = (0..remaining.len()).filter(|&c| remaining[c] > 0).collect();
            if open.is_empty() {
                break;
            }
            let c = open[rng.gen_range(0..open.len())];
            let d = &designs[c];
            let size = rng.gen_range(22.0..90.0);
            let (dw, dh) = (d.size.0 as f64, d.size.1 as f64);
            let cx = rng.gen_range(size..w as f64 - size);
            let cy = rng.gen_range(size..h as f64 - size);
            let hom = if d.template {
                let angles = EulerAngles::new(
                    angle.sample(&mut rng).clamp(-0.6, 0.6),
                    angle.sample(&mut rng).clamp(-0.6, 0.6),
                    roll.sample(&mut rng),
                );
                let k = Intrinsics::new(focal, cx, cy).expect("focal > 0");
                let depth = focal * dw.max(dh) / size;
                Homography::translation(-dw / 2.0, -dh / 2.0)
                    .then(&compose_plane_homography(&angles, &k, depth).expect("valid pose"))
            } else {
                let s = size / dw.max(dh);
                Homography::translation(-dw / 2.0, -dh / 2.0)
                    .then(&Homography::scaling(s, s).expect("s > 0"))
                    .then(&Homography::translation(cx, cy))
            };
            let polygon: Vec<Point> = d.polygon.iter().map(|p| hom.apply(*p)).collect();
            let hull = BBox::hull(&polygon);
            let padded = BBox::new(hull.x - 4.0, hull.y - 4.0, hull.w + 8.0, hull.h + 8.0);
            if hull.x < 0.0
                || hull.y < 0.0
                || hull.right() > w as f64
                || hull.bottom() > h as f64
                || taken.iter().any(|t| t.intersection_area(&padded) > 0.0)
            {
                continue;
            }
            let (ox, oy) = (hull.x.floor(), hull.y.floor());
            let local = hom.then(&Homography::translation(-ox, -oy));
            let face = warp_perspective(
                &faces[c],
                &local,
                (hull.right() - ox).ceil() as u32 + 1,
                (hull.bottom() - oy).ceil() as u32 + 1,
            );
            blend_at(&mut img, &face, ox as i64, oy as i64, rng.gen_range(0.55..1.1));
            let mut inst = Instance::from_polygon(next_instance, &record, c as u64 + 1, polygon);
            inst.physical_object_id = Some(next_instance);
            ds.instances.push(inst);
            next_instance += 1;
            taken.push(hull);
            remaining[c] -= 1;
        }
        images.insert(record.uri.clone(), img);
        ds.images.push(record);
    }

    let mut bg_rng = rng_for(opts.seed, "toy/backgrounds");
    let mut backgrounds = Vec::new();
    let mut background_images = MemoryImageSource::default();
    for i in 0..opts.backgrounds {
        let record = ImageRecord {
            id: i as u64 + 1,
            width: w,
            height: h,
            uri: format!("background/{:03}.png", i + 1),
            geotag: None,
        };
        background_images.insert(record.uri.clone(), render_backdrop(w, h, &mut bg_rng));
        backgrounds.push(record);
    }
    ToyCorpus {
        dataset: ds,
        images,
        backgrounds,
        background_images,
    }
}

/// Annotation-only dataset: `n_images` images along simulated drives, each
/// with one to three instances from `n_categories` categories of unequal
/// frequency. Boxes are placeholders; geotags carry the structure.
pub fn geotagged_metadata(n_images: usize, n_categories: usize, seed: u64) -> Dataset {
    let mut rng = rng_for(seed, "toy/metadata");
    let weights: Vec<f64> = (0..n_categories).map(|c| 1.0 / (1.0 + c as f64 / 10.0)).collect();
    let total: f64 = weights.iter().sum();
    let pick = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut u = rng.gen_range(0.0..total);
        for (c, w) in weights.iter().enumerate() {
            if u < *w {
                return c;
            }
            u -= w;
        }
        n_categories - 1
    };
    let categories = (0..n_categories)
        .map(|c| Category {
            id: c as u64 + 1,
            name: format!("category-{:02}", c + 1),
            template: None,
            has_geometry: false,
        })
        .collect();
    let mut ds = Dataset {
        categories,
        ..Default::default()
    };
    let mut pos = (0.0f64, 0.0f64);
    let mut heading = 0.0f64;
    for i in 0..n_images {
        if rng.gen_bool(0.15) {
            pos.0 += rng.gen_range(-3000.0..3000.0);
            pos.1 += rng.gen_range(-3000.0..3000.0);
            heading = rng.gen_range(0.0..std::f64::consts::TAU);
        } else {
            let step = rng.gen_range(10.0..45.0);
            heading += rng.gen_range(-0.3..0.3);
            pos.0 += step * heading.cos();
            pos.1 += step * heading.sin();
        }
        let record = ImageRecord {
            id: i as u64 + 1,
            width: 1920,
            height: 1080,
            uri: format!("meta/{:05}.jpg", i + 1),
            geotag: Some(Geotag {
                easting: pos.0,
                northing: pos.1,
            }),
        };
        for k in 0..rng.gen_range(1..=3usize) {
            let c = pick(&mut rng);
            let x = 100.0 + 200.0 * k as f64;
            let poly = vec![
                Point::new(x, 100.0),
                Point::new(x + 60.0, 100.0),
                Point::new(x + 60.0, 160.0),
                Point::new(x, 160.0),
            ];
            let id = ds.instances.len() as u64 + 1;
            ds.instances.push(Instance::from_polygon(id, &record, c as u64 + 1, poly));
        }
        ds.images.push(record);
    }
    ds
}

fn jitter<R: Rng>(b: &BBox, amount: f64, rng: &mut R) -> BBox {
    let dx = rng.gen_range(-amount..=amount) * b.w;
    let dy = rng.gen_range(-amount..=amount) * b.h;
    let sw = 1.0 + rng.gen_range(-amount..=amount);
    let sh = 1.0 + rng.gen_range(-amount..=amount);
    BBox::new(b.x + dx, b.y + dy, (b.w * sw).max(1.0), (b.h * sh).max(1.0))
}

/// Detections of an imperfect detector: most instances found with
/// localization noise and high scores, some missed, plus low-scoring false
/// positives and occasional class confusion.
pub fn simulated_detections(ds: &Dataset, seed: u64) -> Vec<Detection> {
    let mut rng = rng_for(seed, "toy/detections");
    let cats: Vec<u64> = ds.categories.iter().map(|c| c.id).collect();
    let images = ds.image_index();
    let mut out = Vec::new();
    for inst in &ds.instances {
        if rng.gen_bool(0.92) {
            let category_id = if rng.gen_bool(0.03) {
                cats[rng.gen_range(0..cats.len())]
            } else {
                inst.category_id
            };
            out.push(Detection {
                image_id: inst.image_id,
                category_id,
                bbox: jitter(&inst.bbox, 0.08, &mut rng),
                score: rng.gen_range(0.4..1.0),
            });
        }
    }
    for img in &ds.images {
        let record = images[&img.id];
        for _ in 0..rng.gen_range(0..3) {
            let s = rng.gen_range(20.0..80.0);
            out.push(Detection {
                image_id: record.id,
                category_id: cats[rng.gen_range(0..cats.len())],
                bbox: BBox::new(
                    rng.gen_range(0.0..(record.width as f64 - s).max(1.0)),
                    rng.gen_range(0.0..(record.height as f64 - s).max(1.0)),
                    s,
                    s,
                ),
                score: rng.gen_range(0.0..0.6),
            });
        }
    }
    out
}

/// Proposals per image: a few near each instance at random ranks, the rest
/// background clutter. Losses are random, higher on average for the
/// foreground.
pub fn simulated_proposals(ds: &Dataset, per_image: usize, seed: u64) -> Vec<RoiCandidate> {
    let mut rng = rng_for(seed, "toy/proposals");
    let mut by_image: BTreeMap<u64, Vec<&Instance>> = BTreeMap::new();
    for inst in &ds.instances {
        by_image.entry(inst.image_id).or_default().push(inst);
    }
    let mut out = Vec::new();
    for img in &ds.images {
        let insts = by_image.get(&img.id).map(Vec::as_slice).unwrap_or(&[]);
        let mut n = 0;
        for inst in insts {
            for k in 0..3 {
                if n >= per_image {
                    break;
                }
                out.push(RoiCandidate {
                    image_id: Some(img.id),
                    bbox: jitter(&inst.bbox, 0.05 + 0.1 * k as f64, &mut rng),
                    objectness: rng.gen_range(0.2..1.0),
                    loss: Some(rng.gen_range(0.0..2.0)),
                    label: RoiLabel::Foreground(inst.category_id),
                    assigned_gt: Some(inst.id),
                    level: 0,
                });
                n += 1;
            }
        }
        while n < per_image {
            let s = rng.gen_range(16.0..120.0);
            out.push(RoiCandidate {
                image_id: Some(img.id),
                bbox: BBox::new(
                    rng.gen_range(0.0..(img.width as f64 - s).max(1.0)),
                    rng.gen_range(0.0..(img.height as f64 - s).max(1.0)),
                    s,
                    s,
                ),
                objectness: rng.gen_range(0.0..0.9),
                loss: Some(rng.gen_range(0.0..1.0)),
                label: RoiLabel::Background,
                assigned_gt: None,
                level: (s / 40.0) as u32,
            });
            n += 1;
        }
    }
    out
}
