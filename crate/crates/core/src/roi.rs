//! Region-of-interest selection for two-stage detector training and
//! inference: hard-example mining, per-object balanced sampling, background
//! down-weighting, NMS and the proposal pass-through budget.
//!
//! Everything here works on exported candidate records; no network code.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BBox;

/// Usual per-image ROI budget of a two-stage detector.
pub const DEFAULT_ROI_BUDGET: usize = 256;
pub const DEFAULT_PRE_NMS_TOP: usize = 10_000;
pub const DEFAULT_POST_MERGE: usize = 2_000;
pub const DEFAULT_OHEM_POOL: usize = 2_000;
pub const DEFAULT_NMS_IOU: f64 = 0.7;

pub const FOREGROUND_WEIGHT: f64 = 1.0;
pub const RPN_BACKGROUND_WEIGHT: f64 = 0.01;
pub const CLASSIFIER_BACKGROUND_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiLabel {
    Background,
    Foreground(u64),
}

impl RoiLabel {
    pub fn is_foreground(&self) -> bool {
        matches!(self, RoiLabel::Foreground(_))
    }
}

/// One exported region. On the wire (one JSON object per line):
/// `{"image_id": 3, "box": [x, y, w, h], "objectness": 0.9, "loss": 0.4,
///   "category_id": 12, "assigned_gt": 77, "level": 2}` where a missing or
/// null `category_id` marks background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawCandidate", into = "RawCandidate")]
pub struct RoiCandidate {
    pub image_id: Option<u64>,
    pub bbox: BBox,
    pub objectness: f64,
    pub loss: Option<f64>,
    pub label: RoiLabel,
    pub assigned_gt: Option<u64>,
    pub level: u32,
}

#[derive(Serialize, Deserialize)]
struct RawCandidate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_id: Option<u64>,
    #[serde(rename = "box")]
    bbox: BBox,
    objectness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loss: Option<f64>,
    #[serde(default)]
    category_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    assigned_gt: Option<u64>,
    #[serde(default)]
    level: u32,
}

impl From<RawCandidate> for RoiCandidate {
    fn from(r: RawCandidate) -> Self {
        RoiCandidate {
            image_id: r.image_id,
            bbox: r.bbox,
            objectness: r.objectness,
            loss: r.loss,
            label: r.category_id.map_or(RoiLabel::Background, RoiLabel::Foreground),
            assigned_gt: r.assigned_gt,
            level: r.level,
        }
    }
}

impl From<RoiCandidate> for RawCandidate {
    fn from(c: RoiCandidate) -> Self {
        RawCandidate {
            image_id: c.image_id,
            bbox: c.bbox,
            objectness: c.objectness,
            loss: c.loss,
            category_id: match c.label {
                RoiLabel::Background => None,
                RoiLabel::Foreground(id) => Some(id),
            },
            assigned_gt: c.assigned_gt,
            level: c.level,
        }
    }
}

/// Parses line-delimited candidate records; blank lines are skipped.
pub fn parse_candidates(text: &str) -> Result<Vec<RoiCandidate>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let c: RoiCandidate = serde_json::from_str(line)
                .map_err(|e| Error::parse(format!("line {}", i + 1), e))?;
            if !(c.bbox.w > 0.0 && c.bbox.h > 0.0) {
                return Err(Error::parse(format!("line {}", i + 1), "box needs w, h > 0"));
            }
            Ok(c)
        })
        .collect()
}

/// Indices of `keys` ordered by descending key, ties by ascending index.
fn rank_descending(indices: impl Iterator<Item = usize>, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = indices.collect();
    idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    idx
}

/// Hard-example selection: foreground and background pools are ranked by
/// loss separately and the top `fg_budget` / `bg_budget` of each are kept.
/// Candidates below `min_loss` (when given) are never selected.
///
/// Returns candidate indices, foreground picks first.
pub fn ohem_select(
    candidates: &[RoiCandidate],
    fg_budget: usize,
    bg_budget: usize,
    min_loss: Option<f64>,
) -> Result<Vec<usize>> {
    let mut losses = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        match c.loss {
            Some(l) if l >= 0.0 => losses.push(l),
            Some(l) => {
                return Err(Error::InvalidInput(format!("candidate {i} has invalid loss {l}")))
            }
            None => return Err(Error::InvalidInput(format!("candidate {i} has no loss"))),
        }
    }
    let floor = min_loss.unwrap_or(f64::NEG_INFINITY);
    let pick = |fg: bool, budget: usize| {
        rank_descending(
            (0..candidates.len())
                .filter(|&i| candidates[i].label.is_foreground() == fg && losses[i] >= floor),
            |i| losses[i],
        )
        .into_iter()
        .take(budget)
    };
    Ok(pick(true, fg_budget).chain(pick(false, bg_budget)).collect())
}

/// Gives each distinct assigned object the same share of `total_budget`.
///
/// Quotas are filled round-robin in ascending object-id order, which yields
/// `floor(budget / objects)` each plus one extra for the first objects;
/// objects with too few ROIs contribute all of theirs and the surplus keeps
/// going round-robin. Within an object, ROIs are drawn uniformly without
/// replacement. Candidates without an assigned object are ignored.
pub fn balanced_select<R: Rng + ?Sized>(
    candidates: &[RoiCandidate],
    total_budget: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if total_budget == 0 {
        return Err(Error::InvalidInput("balanced selection needs a positive budget".into()));
    }
    let mut by_object: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        if let Some(gt) = c.assigned_gt {
            by_object.entry(gt).or_default().push(i);
        }
    }
    if by_object.is_empty() {
        return Err(Error::InvalidInput("no candidate is assigned to an object".into()));
    }
    let quotas = balanced_quotas(
        &by_object.values().map(Vec::len).collect::<Vec<_>>(),
        total_budget,
    );
    let mut selected = Vec::new();
    for (rois, quota) in by_object.values().zip(quotas) {
        let mut picks: Vec<usize> = sample(rng, rois.len(), quota)
            .into_iter()
            .map(|j| rois[j])
            .collect();
        picks.sort_unstable();
        selected.extend(picks);
    }
    Ok(selected)
}

/// Round-robin quota allocation over objects with the given capacities.
pub fn balanced_quotas(capacities: &[usize], budget: usize) -> Vec<usize> {
    let mut quotas = vec![0; capacities.len()];
    let mut remaining = budget;
    loop {
        let open: Vec<usize> = (0..capacities.len())
            .filter(|&i| quotas[i] < capacities[i])
            .collect();
        if open.is_empty() || remaining == 0 {
            return quotas;
        }
        // whole rounds at once, then a partial round in index order
        let min_room = open.iter().map(|&i| capacities[i] - quotas[i]).min().unwrap();
        let rounds = (remaining / open.len()).min(min_room);
        if rounds > 0 {
            for &i in &open {
                quotas[i] += rounds;
            }
            remaining -= rounds * open.len();
        } else {
            for &i in open.iter().take(remaining) {
                quotas[i] += 1;
            }
            remaining = remaining.saturating_sub(open.len());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Rpn,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedRoi {
    pub candidate: RoiCandidate,
    pub weight: f64,
}

pub fn background_weight(stage: Stage) -> f64 {
    match stage {
        Stage::Rpn => RPN_BACKGROUND_WEIGHT,
        Stage::Classifier => CLASSIFIER_BACKGROUND_WEIGHT,
    }
}

/// Foreground ROIs weigh 1; background ones 0.01 for the RPN and 0.1 for
/// the classifier.
pub fn assign_weights(selected: &[RoiCandidate], stage: Stage) -> Vec<WeightedRoi> {
    selected
        .iter()
        .map(|c| WeightedRoi {
            candidate: c.clone(),
            weight: if c.label.is_foreground() {
                FOREGROUND_WEIGHT
            } else {
                background_weight(stage)
            },
        })
        .collect()
}

/// Greedy non-maximum suppression. Boxes are visited by descending score
/// (ties: lower index first); a box is dropped when its IoU with an already
/// kept box exceeds `iou_threshold`. Kept indices come back in visit order.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "one score per box");
    let order = rank_descending(0..boxes.len(), |i| scores[i]);
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep
            .iter()
            .all(|&k| boxes[k].iou(&boxes[i]) <= iou_threshold)
        {
            keep.push(i);
        }
    }
    keep
}

fn top_by_objectness(candidates: &[RoiCandidate], n: usize) -> Vec<usize> {
    let mut idx = rank_descending(0..candidates.len(), |i| candidates[i].objectness);
    idx.truncate(n);
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassThrough {
    pub pre_nms_top: usize,
    pub post_merge: usize,
    pub iou_threshold: f64,
}

impl Default for PassThrough {
    fn default() -> Self {
        PassThrough {
            pre_nms_top: DEFAULT_PRE_NMS_TOP,
            post_merge: DEFAULT_POST_MERGE,
            iou_threshold: DEFAULT_NMS_IOU,
        }
    }
}

/// Detection-time proposal flow: top `pre_nms_top` per pyramid level by
/// objectness, merge the levels, NMS, keep the best `post_merge`.
pub fn pass_through(
    per_level: &BTreeMap<u32, Vec<RoiCandidate>>,
    cfg: &PassThrough,
) -> Vec<RoiCandidate> {
    let merged: Vec<RoiCandidate> = per_level
        .values()
        .flat_map(|cands| {
            top_by_objectness(cands, cfg.pre_nms_top)
                .into_iter()
                .map(move |i| cands[i].clone())
        })
        .collect();
    let boxes: Vec<BBox> = merged.iter().map(|c| c.bbox).collect();
    let scores: Vec<f64> = merged.iter().map(|c| c.objectness).collect();
    nms(&boxes, &scores, cfg.iou_threshold)
        .into_iter()
        .take(cfg.post_merge)
        .map(|i| merged[i].clone())
        .collect()
}

/// Candidate pool for hard-example mining: the best `pool_size` regions by
/// objectness, de-duplicated by NMS. Returns indices into `candidates`.
pub fn ohem_candidate_pool(
    candidates: &[RoiCandidate],
    pool_size: usize,
    iou_threshold: f64,
) -> Vec<usize> {
    let top = top_by_objectness(candidates, pool_size);
    let boxes: Vec<BBox> = top.iter().map(|&i| candidates[i].bbox).collect();
    let scores: Vec<f64> = top.iter().map(|&i| candidates[i].objectness).collect();
    nms(&boxes, &scores, iou_threshold)
        .into_iter()
        .map(|j| top[j])
        .collect()
}
