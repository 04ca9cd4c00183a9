//! Annotated traffic-sign datasets.
//!
//! The on-disk form is a COCO-style annotation file extended with
//! `polygon`, `difficult`, `physical_object_id` on annotations, `geotag` on
//! images and `template`/`has_geometry` on categories. See
//! `docs/formats.md` for the field-by-field description.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Annotations whose shorter bbox side is below this are flagged difficult.
pub const DIFFICULT_MIN_SIZE: f64 = 30.0;

/// Mean Earth radius used by the equirectangular geotag importer.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned box `(x, y, w, h)` in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    /// Tight axis-aligned hull of a point set.
    pub fn hull(points: &[Point]) -> Self {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        if points.is_empty() {
            return BBox::default();
        }
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn min_side(&self) -> f64 {
        self.w.min(self.h)
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Clips to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> Self {
        let x0 = self.x.clamp(0.0, width);
        let y0 = self.y.clamp(0.0, height);
        let x1 = self.right().clamp(0.0, width);
        let y1 = self.bottom().clamp(0.0, height);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// Difficult flag as a pure function of the box: shorter side below 30 px.
pub fn is_difficult(bbox: &BBox) -> bool {
    bbox.min_side() < DIFFICULT_MIN_SIZE
}

/// Shoelace signed area; positive means counter-clockwise in the
/// x-right/y-up sense of the formula.
pub fn signed_area(polygon: &[Point]) -> f64 {
    let n = polygon.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Normalizes winding to counter-clockwise, keeping the first vertex in place
/// so that vertex correspondences with a template survive.
pub fn normalize_winding(polygon: &mut [Point]) {
    if polygon.len() >= 3 && signed_area(polygon) < 0.0 {
        polygon[1..].reverse();
    }
}

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geotag {
    pub easting: f64,
    pub northing: f64,
}

impl Geotag {
    pub fn distance(&self, other: &Geotag) -> f64 {
        (self.easting - other.easting).hypot(self.northing - other.northing)
    }
}

/// Equirectangular projection of `(lat, lon)` degrees around `origin`.
///
/// Accurate to well under a meter at the 50 m scale used for clustering,
/// as long as the dataset spans at most a few hundred kilometers.
pub fn project_equirectangular(lat_lon: [f64; 2], origin: [f64; 2]) -> Geotag {
    let lat0 = origin[0].to_radians();
    let d_lat = (lat_lon[0] - origin[0]).to_radians();
    let d_lon = (lat_lon[1] - origin[1]).to_radians();
    Geotag {
        easting: EARTH_RADIUS_M * d_lon * lat0.cos(),
        northing: EARTH_RADIUS_M * d_lat,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub uri: String,
    pub geotag: Option<Geotag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub polygon: Vec<Point>,
    pub bbox: BBox,
    pub difficult: bool,
    pub physical_object_id: Option<u64>,
}

impl Instance {
    /// Builds an instance, normalizing winding and deriving bbox and the
    /// difficult flag from the polygon.
    pub fn from_polygon(
        id: u64,
        image: &ImageRecord,
        category_id: u64,
        mut polygon: Vec<Point>,
    ) -> Self {
        normalize_winding(&mut polygon);
        let bbox = BBox::hull(&polygon).clip(image.width as f64, image.height as f64);
        Instance {
            id,
            image_id: image.id,
            category_id,
            difficult: is_difficult(&bbox),
            polygon,
            bbox,
            physical_object_id: None,
        }
    }
}

/// Canonical rectified shape of a category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub points: Vec<Point>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Category {
    pub id: u64,
    pub name: String,
    pub template: Option<Template>,
    pub has_geometry: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub instances: Vec<Instance>,
    pub categories: Vec<Category>,
}

/// Non-fatal findings while loading.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadWarning {
    DifficultMismatch { instance_id: u64, stored: bool },
    BBoxMismatch { instance_id: u64 },
    MissingGeotag { image_id: u64 },
}

impl std::fmt::Display for LoadWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoadWarning::DifficultMismatch {
                instance_id,
                stored,
            } => write!(
                f,
                "annotation {instance_id}: stored difficult={stored} disagrees with the 30 px rule"
            ),
            LoadWarning::BBoxMismatch { instance_id } => write!(
                f,
                "annotation {instance_id}: stored bbox differs from polygon hull, recomputed"
            ),
            LoadWarning::MissingGeotag { image_id } => {
                write!(f, "image {image_id}: no geotag")
            }
        }
    }
}

#[derive(Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    pub warnings: Vec<LoadWarning>,
}

impl Dataset {
    pub fn image_index(&self) -> HashMap<u64, &ImageRecord> {
        self.images.iter().map(|i| (i.id, i)).collect()
    }

    pub fn category_index(&self) -> HashMap<u64, &Category> {
        self.categories.iter().map(|c| (c.id, c)).collect()
    }

    pub fn category(&self, id: u64) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    /// Instance count per category id; categories without instances map to 0.
    pub fn instance_counts(&self) -> BTreeMap<u64, usize> {
        let mut counts: BTreeMap<u64, usize> =
            self.categories.iter().map(|c| (c.id, 0)).collect();
        for inst in &self.instances {
            *counts.entry(inst.category_id).or_default() += 1;
        }
        counts
    }

    /// Restricts the dataset to the given images (and their instances).
    pub fn subset(&self, image_ids: &HashSet<u64>) -> Dataset {
        Dataset {
            images: self
                .images
                .iter()
                .filter(|i| image_ids.contains(&i.id))
                .cloned()
                .collect(),
            instances: self
                .instances
                .iter()
                .filter(|a| image_ids.contains(&a.image_id))
                .cloned()
                .collect(),
            categories: self.categories.clone(),
        }
    }

    /// Appends another dataset's images and instances. Categories must agree.
    pub fn merge(&mut self, other: Dataset) -> Result<()> {
        for cat in other.categories {
            if self.category(cat.id).is_none() {
                self.categories.push(cat);
            }
        }
        self.images.extend(other.images);
        self.instances.extend(other.instances);
        self.validate()
    }

    /// Checks every type invariant.
    pub fn validate(&self) -> Result<()> {
        let mut image_dims = HashMap::new();
        for img in &self.images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::Integrity(format!(
                    "image {} has zero extent",
                    img.id
                )));
            }
            if image_dims.insert(img.id, (img.width, img.height)).is_some() {
                return Err(Error::Integrity(format!("duplicate image id {}", img.id)));
            }
        }
        let mut cat_ids = HashSet::new();
        for cat in &self.categories {
            if !cat_ids.insert(cat.id) {
                return Err(Error::Integrity(format!("duplicate category id {}", cat.id)));
            }
            if let Some(t) = &cat.template {
                validate_template(cat.id, cat.has_geometry, t)?;
            }
        }
        let mut inst_ids = HashSet::new();
        for inst in &self.instances {
            if !inst_ids.insert(inst.id) {
                return Err(Error::Integrity(format!("duplicate annotation id {}", inst.id)));
            }
            let Some(&(w, h)) = image_dims.get(&inst.image_id) else {
                return Err(Error::Integrity(format!(
                    "annotation {} references missing image {}",
                    inst.id, inst.image_id
                )));
            };
            if !cat_ids.contains(&inst.category_id) {
                return Err(Error::Integrity(format!(
                    "annotation {} references missing category {}",
                    inst.id, inst.category_id
                )));
            }
            if inst.polygon.len() < 3 {
                return Err(Error::Integrity(format!(
                    "annotation {} has a polygon with {} points",
                    inst.id,
                    inst.polygon.len()
                )));
            }
            let expected = BBox::hull(&inst.polygon).clip(w as f64, h as f64);
            if expected != inst.bbox {
                return Err(Error::Integrity(format!(
                    "annotation {} bbox is not the polygon hull",
                    inst.id
                )));
            }
            if inst.difficult != is_difficult(&inst.bbox) {
                return Err(Error::Integrity(format!(
                    "annotation {} difficult flag disagrees with the 30 px rule",
                    inst.id
                )));
            }
        }
        Ok(())
    }
}

fn validate_template(cat_id: u64, has_geometry: bool, t: &Template) -> Result<()> {
    if !has_geometry {
        return Err(Error::Integrity(format!(
            "category {cat_id} has a template but has_geometry = false"
        )));
    }
    if t.points.len() < 4 || t.width == 0 || t.height == 0 {
        return Err(Error::Integrity(format!(
            "category {cat_id} template needs >= 4 points and a positive canonical size"
        )));
    }
    if signed_area(&t.points).abs() < 1e-9 {
        return Err(Error::Integrity(format!(
            "category {cat_id} template points are collinear"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// On-disk schema

#[derive(Debug, Serialize, Deserialize)]
struct RawImage {
    id: u64,
    width: u32,
    height: u32,
    file_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    geotag: Option<Geotag>,
    /// `[lat, lon]` in degrees; converted to a planar geotag on load.
    #[serde(default, skip_serializing)]
    latlon: Option<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polygon: Option<Vec<Point>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segmentation: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    area: Option<f64>,
    #[serde(default)]
    iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    difficult: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    physical_object_id: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawCategory {
    id: u64,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    template: Option<Template>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    has_geometry: Option<bool>,
}

fn section<'a>(root: &'a Value, key: &str) -> Result<&'a [Value]> {
    match root.get(key) {
        None => Ok(&[]),
        Some(Value::Array(items)) => Ok(items),
        Some(_) => Err(Error::parse(key, "expected an array")),
    }
}

fn record<T: serde::de::DeserializeOwned>(key: &str, index: usize, v: &Value) -> Result<T> {
    T::deserialize(v).map_err(|e| {
        let id = v
            .get("id")
            .map(|id| format!(" (id {id})"))
            .unwrap_or_default();
        Error::parse(format!("{key}[{index}]{id}"), e)
    })
}

/// Parses an annotation document from a JSON string.
pub fn parse_dataset(text: &str) -> Result<Loaded> {
    let root: Value = serde_json::from_str(text).map_err(|e| {
        Error::parse(format!("line {} column {}", e.line(), e.column()), e)
    })?;
    if !root.is_object() {
        return Err(Error::parse("$", "expected a JSON object"));
    }
    let mut warnings = Vec::new();

    let raw_images: Vec<RawImage> = section(&root, "images")?
        .iter()
        .enumerate()
        .map(|(i, v)| record("images", i, v))
        .collect::<Result<_>>()?;
    let latlons: Vec<[f64; 2]> = raw_images.iter().filter_map(|r| r.latlon).collect();
    let origin = if latlons.is_empty() {
        [0.0, 0.0]
    } else {
        let n = latlons.len() as f64;
        [
            latlons.iter().map(|l| l[0]).sum::<f64>() / n,
            latlons.iter().map(|l| l[1]).sum::<f64>() / n,
        ]
    };
    let images: Vec<ImageRecord> = raw_images
        .into_iter()
        .map(|r| ImageRecord {
            id: r.id,
            width: r.width,
            height: r.height,
            uri: r.file_name,
            geotag: r
                .geotag
                .or_else(|| r.latlon.map(|ll| project_equirectangular(ll, origin))),
        })
        .collect();

    let categories: Vec<Category> = section(&root, "categories")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let raw: RawCategory = record("categories", i, v)?;
            let template = raw.template.map(|mut t| {
                normalize_winding(&mut t.points);
                t
            });
            Ok(Category {
                id: raw.id,
                name: raw.name,
                has_geometry: raw.has_geometry.unwrap_or(template.is_some()),
                template,
            })
        })
        .collect::<Result<_>>()?;

    let dims: HashMap<u64, (u32, u32)> =
        images.iter().map(|i| (i.id, (i.width, i.height))).collect();
    let mut instances = Vec::new();
    for (i, v) in section(&root, "annotations")?.iter().enumerate() {
        let raw: RawAnnotation = record("annotations", i, v)?;
        let locator = || format!("annotations[{i}] (id {})", raw.id);
        let mut polygon = match (raw.polygon, &raw.segmentation) {
            (Some(p), _) => p,
            (None, Some(seg)) if !seg.is_empty() && seg[0].len() % 2 == 0 => seg[0]
                .chunks_exact(2)
                .map(|c| Point::new(c[0], c[1]))
                .collect(),
            _ => return Err(Error::parse(locator(), "missing polygon")),
        };
        if polygon.len() < 3 {
            return Err(Error::parse(locator(), "polygon needs at least 3 points"));
        }
        normalize_winding(&mut polygon);
        let Some(&(w, h)) = dims.get(&raw.image_id) else {
            return Err(Error::Integrity(format!(
                "annotation {} references missing image {}",
                raw.id, raw.image_id
            )));
        };
        let bbox = BBox::hull(&polygon).clip(w as f64, h as f64);
        if let Some(stored) = raw.bbox {
            let close = (stored.x - bbox.x).abs() < 1e-6
                && (stored.y - bbox.y).abs() < 1e-6
                && (stored.w - bbox.w).abs() < 1e-6
                && (stored.h - bbox.h).abs() < 1e-6;
            if !close {
                warnings.push(LoadWarning::BBoxMismatch {
                    instance_id: raw.id,
                });
            }
        }
        let difficult = is_difficult(&bbox);
        if let Some(stored) = raw.difficult {
            if stored != difficult {
                warnings.push(LoadWarning::DifficultMismatch {
                    instance_id: raw.id,
                    stored,
                });
            }
        }
        instances.push(Instance {
            id: raw.id,
            image_id: raw.image_id,
            category_id: raw.category_id,
            polygon,
            bbox,
            difficult,
            physical_object_id: raw.physical_object_id,
        });
    }

    let dataset = Dataset {
        images,
        instances,
        categories,
    };
    dataset.validate()?;
    for img in &dataset.images {
        if img.geotag.is_none() {
            warnings.push(LoadWarning::MissingGeotag { image_id: img.id });
        }
    }
    for w in &warnings {
        if !matches!(w, LoadWarning::MissingGeotag { .. }) {
            log::warn!("{w}");
        }
    }
    Ok(Loaded { dataset, warnings })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// Serializes a dataset after checking its invariants.
pub fn dataset_to_json(ds: &Dataset) -> Result<String> {
    ds.validate()?;
    let images: Vec<RawImage> = ds
        .images
        .iter()
        .map(|i| RawImage {
            id: i.id,
            width: i.width,
            height: i.height,
            file_name: i.uri.clone(),
            geotag: i.geotag,
            latlon: None,
        })
        .collect();
    let annotations: Vec<RawAnnotation> = ds
        .instances
        .iter()
        .map(|a| RawAnnotation {
            id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            segmentation: Some(vec![a
                .polygon
                .iter()
                .flat_map(|p| [p.x, p.y])
                .collect()]),
            polygon: Some(a.polygon.clone()),
            bbox: Some(a.bbox),
            area: Some(a.bbox.area()),
            iscrowd: 0,
            difficult: Some(a.difficult),
            physical_object_id: a.physical_object_id,
        })
        .collect();
    let categories: Vec<RawCategory> = ds
        .categories
        .iter()
        .map(|c| RawCategory {
            id: c.id,
            name: c.name.clone(),
            template: c.template.clone(),
            has_geometry: Some(c.has_geometry),
        })
        .collect();
    let doc = serde_json::json!({
        "info": { "schema_version": 1 },
        "images": images,
        "annotations": annotations,
        "categories": categories,
    });
    Ok(serde_json::to_string_pretty(&doc).expect("dataset serializes"))
}

/// Writes the dataset JSON, creating missing parent directories.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = dataset_to_json(ds)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryCriteria {
    pub id: u64,
    pub name: String,
    pub instances: usize,
    pub compliant_instances: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriteriaReport {
    pub min_instances: usize,
    pub min_size: f64,
    pub categories: Vec<CategoryCriteria>,
    pub failing: Vec<u64>,
}

impl CriteriaReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

/// Lists categories without `min_instances` annotations whose shorter bbox
/// side is at least `min_size`. The dataset's own rule is 20 at 30 px.
pub fn validate_category_criteria(
    ds: &Dataset,
    min_instances: usize,
    min_size: f64,
) -> CriteriaReport {
    let mut stats: BTreeMap<u64, (usize, usize)> =
        ds.categories.iter().map(|c| (c.id, (0, 0))).collect();
    for inst in &ds.instances {
        let entry = stats.entry(inst.category_id).or_default();
        entry.0 += 1;
        if inst.bbox.min_side() >= min_size {
            entry.1 += 1;
        }
    }
    let names: HashMap<u64, &str> = ds
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    let categories: Vec<CategoryCriteria> = stats
        .into_iter()
        .map(|(id, (total, compliant))| CategoryCriteria {
            id,
            name: names.get(&id).copied().unwrap_or_default().to_string(),
            instances: total,
            compliant_instances: compliant,
            pass: compliant >= min_instances,
        })
        .collect();
    let failing = categories
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.id)
        .collect();
    CriteriaReport {
        min_instances,
        min_size,
        categories,
        failing,
    }
}
