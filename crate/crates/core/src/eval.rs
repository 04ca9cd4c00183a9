//! Detection evaluation: IoU matching with ignored ground truths, average
//! precision (all-points and 101-point), mAP over IoU thresholds, maximal
//! recall, best-F operating points and proposal recall.
//!
//! Matching follows the COCO convention: detections are visited by
//! descending score and each takes the unmatched, non-ignored ground truth
//! with the highest IoU at or above the threshold. A detection that finds
//! none but overlaps an ignored ground truth (difficult, or smaller than
//! `min_size`) is itself ignored. Everything else is a false positive.
//!
//! Precision-recall points are taken at distinct score thresholds, so tied
//! scores enter the curve together.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, Dataset};
use crate::roi::RoiCandidate;

/// Default minimal ground-truth size (shorter side) for DFG-style runs.
pub const DFG_MIN_SIZE: f64 = 30.0;
/// Minimal size for the STSD protocol.
pub const STSD_MIN_SIZE: f64 = 50.0;
pub const MAX_RECALL_SCORE: f64 = 0.01;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

/// Parses line-delimited detection records.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let loc = || format!("line {}", i + 1);
            let d: Detection = serde_json::from_str(line).map_err(|e| Error::parse(loc(), e))?;
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::parse(loc(), format!("score {} outside [0, 1]", d.score)));
            }
            if !(d.bbox.w > 0.0 && d.bbox.h > 0.0) {
                return Err(Error::parse(loc(), "box needs w, h > 0"));
            }
            Ok(d)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub difficult: bool,
}

impl GroundTruth {
    pub fn is_ignored(&self, min_size: f64) -> bool {
        self.difficult || self.bbox.min_side() < min_size
    }
}

pub fn ground_truths(ds: &Dataset) -> Vec<GroundTruth> {
    ds.instances
        .iter()
        .map(|i| GroundTruth {
            image_id: i.image_id,
            category_id: i.category_id,
            bbox: i.bbox,
            difficult: i.difficult,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    TruePositive { gt: usize },
    FalsePositive,
    Ignored { gt: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedDetection {
    /// Index into the detection slice.
    pub det: usize,
    pub score: f64,
    pub kind: MatchKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MatchTable {
    /// In visit order (descending score, then index).
    pub detections: Vec<MatchedDetection>,
    pub gt_matched: Vec<Option<usize>>,
    pub gt_ignored: Vec<bool>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub ignored_detections: usize,
}

impl MatchTable {
    pub fn relevant_gts(&self) -> usize {
        self.gt_ignored.iter().filter(|&&i| !i).count()
    }
}

/// Matches one image/category slice.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
    min_size: f64,
) -> MatchTable {
    let boxes: Vec<(BBox, f64)> = dets.iter().map(|d| (d.bbox, d.score)).collect();
    match_boxes(&boxes, gts, iou_threshold, min_size)
}

fn match_boxes(
    dets: &[(BBox, f64)],
    gts: &[GroundTruth],
    iou_threshold: f64,
    min_size: f64,
) -> MatchTable {
    let gt_ignored: Vec<bool> = gts.iter().map(|g| g.is_ignored(min_size)).collect();
    let mut gt_matched: Vec<Option<usize>> = vec![None; gts.len()];
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1).then(a.cmp(&b)));

    let mut table = MatchTable::default();
    for d in order {
        let (bbox, score) = dets[d];
        let mut best: Option<(usize, f64)> = None;
        let mut best_ignored: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            let v = bbox.iou(&gt.bbox);
            if v < iou_threshold {
                continue;
            }
            let slot = if gt_ignored[g] {
                &mut best_ignored
            } else if gt_matched[g].is_none() {
                &mut best
            } else {
                continue;
            };
            if slot.is_none_or(|(_, bv)| v > bv) {
                *slot = Some((g, v));
            }
        }
        let kind = match (best, best_ignored) {
            (Some((g, _)), _) => {
                gt_matched[g] = Some(d);
                table.true_positives += 1;
                MatchKind::TruePositive { gt: g }
            }
            (None, Some((g, _))) => {
                table.ignored_detections += 1;
                MatchKind::Ignored { gt: g }
            }
            (None, None) => {
                table.false_positives += 1;
                MatchKind::FalsePositive
            }
        };
        table.detections.push(MatchedDetection {
            det: d,
            score,
            kind,
        });
    }
    table.false_negatives = gt_matched
        .iter()
        .zip(&gt_ignored)
        .filter(|(m, &ign)| m.is_none() && !ign)
        .count();
    table.gt_matched = gt_matched;
    table.gt_ignored = gt_ignored;
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Exact area under the monotone precision envelope.
    #[default]
    AllPoints,
    /// Mean of the envelope sampled at recall 0, 0.01, ..., 1.
    Coco101,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Detections scoring at least this are counted.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// Builds the curve from `(score, is_true_positive)` pairs of non-ignored
/// detections. One point per distinct score.
pub fn pr_curve(scored: &[(f64, bool)], relevant_gts: usize) -> PrCurve {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            recall: if relevant_gts == 0 {
                0.0
            } else {
                tp as f64 / relevant_gts as f64
            },
            precision: tp as f64 / (tp + fp) as f64,
            score,
        });
    }
    PrCurve { points }
}

/// Area under the precision envelope of `curve`. The caller guarantees at
/// least one relevant ground truth.
pub fn curve_ap(curve: &PrCurve, interpolation: Interpolation) -> f64 {
    let pts = &curve.points;
    let mut envelope: Vec<f64> = pts.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    match interpolation {
        Interpolation::AllPoints => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (p, env) in pts.iter().zip(&envelope) {
                ap += (p.recall - prev_recall) * env;
                prev_recall = p.recall;
            }
            ap
        }
        Interpolation::Coco101 => {
            let mut sum = 0.0;
            let mut j = 0;
            for t in 0..=100 {
                let r = t as f64 / 100.0;
                while j < pts.len() && pts[j].recall < r {
                    j += 1;
                }
                if j < pts.len() {
                    sum += envelope[j];
                }
            }
            sum / 101.0
        }
    }
}

/// AP for one category given its matched detections; `None` when there is
/// no relevant ground truth.
pub fn average_precision(
    scored: &[(f64, bool)],
    relevant_gts: usize,
    interpolation: Interpolation,
) -> Option<f64> {
    (relevant_gts > 0).then(|| curve_ap(&pr_curve(scored, relevant_gts), interpolation))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BestF {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub score: f64,
    pub false_positive_rate: f64,
    pub miss_rate: f64,
}

/// Operating point with the highest harmonic mean of precision and recall;
/// ties go to the higher recall.
pub fn best_f_measure(curve: &PrCurve) -> BestF {
    let mut best = BestF {
        precision: 0.0,
        recall: 0.0,
        f_measure: 0.0,
        score: 1.0,
        false_positive_rate: 1.0,
        miss_rate: 1.0,
    };
    let mut found = false;
    for p in &curve.points {
        let f = if p.precision + p.recall > 0.0 {
            2.0 * p.precision * p.recall / (p.precision + p.recall)
        } else {
            0.0
        };
        if !found || f > best.f_measure || (f == best.f_measure && p.recall > best.recall) {
            found = true;
            best = BestF {
                precision: p.precision,
                recall: p.recall,
                f_measure: f,
                score: p.score,
                false_positive_rate: 1.0 - p.precision,
                miss_rate: 1.0 - p.recall,
            };
        }
    }
    best
}

type SliceKey = (u64, u64);

/// Detections and ground truths grouped by (category, image).
struct Grouped<'a> {
    dets: HashMap<SliceKey, Vec<&'a Detection>>,
    gts: HashMap<SliceKey, Vec<GroundTruth>>,
    categories: BTreeSet<u64>,
}

fn group<'a>(dets: &'a [Detection], gts: &[GroundTruth]) -> Grouped<'a> {
    let mut g = Grouped {
        dets: HashMap::new(),
        gts: HashMap::new(),
        categories: BTreeSet::new(),
    };
    for d in dets {
        g.dets.entry((d.category_id, d.image_id)).or_default().push(d);
        g.categories.insert(d.category_id);
    }
    for t in gts {
        g.gts.entry((t.category_id, t.image_id)).or_default().push(*t);
        g.categories.insert(t.category_id);
    }
    g
}

/// Per-category matching outcome at one IoU threshold.
#[derive(Debug, Clone, Default)]
struct CategoryMatches {
    scored: Vec<(f64, bool)>,
    relevant_gts: usize,
    tp: usize,
    fp: usize,
    fn_: usize,
    ignored_dets: usize,
    ignored_gts: usize,
}

fn match_category(
    g: &Grouped,
    category: u64,
    iou_threshold: f64,
    min_size: f64,
    min_score: f64,
) -> CategoryMatches {
    let mut images: BTreeSet<u64> = BTreeSet::new();
    for &(c, i) in g.dets.keys().chain(g.gts.keys()) {
        if c == category {
            images.insert(i);
        }
    }
    let mut out = CategoryMatches::default();
    for image in images {
        let key = (category, image);
        let dets: Vec<(BBox, f64)> = g
            .dets
            .get(&key)
            .map(|v| {
                v.iter()
                    .filter(|d| d.score >= min_score)
                    .map(|d| (d.bbox, d.score))
                    .collect()
            })
            .unwrap_or_default();
        let gts = g.gts.get(&key).map(Vec::as_slice).unwrap_or(&[]);
        let table = match_boxes(&dets, gts, iou_threshold, min_size);
        for m in &table.detections {
            match m.kind {
                MatchKind::TruePositive { .. } => out.scored.push((m.score, true)),
                MatchKind::FalsePositive => out.scored.push((m.score, false)),
                MatchKind::Ignored { .. } => {}
            }
        }
        out.relevant_gts += table.relevant_gts();
        out.ignored_gts += table.gt_ignored.len() - table.relevant_gts();
        out.tp += table.true_positives;
        out.fp += table.false_positives;
        out.fn_ += table.false_negatives;
        out.ignored_dets += table.ignored_detections;
    }
    out
}

/// Per-category AP (percent) at each threshold plus the category means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSlice {
    pub iou_thresholds: Vec<f64>,
    pub interpolation: Interpolation,
    /// AP per category per threshold; categories without relevant ground
    /// truth are omitted.
    pub per_category: BTreeMap<u64, Vec<f64>>,
    /// Mean over categories at each threshold.
    pub map_per_threshold: Vec<f64>,
    /// Mean over thresholds, then over categories.
    pub map: f64,
    pub excluded_categories: Vec<u64>,
}

pub fn map_at(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thresholds: &[f64],
    min_size: f64,
    interpolation: Interpolation,
) -> MapSlice {
    let g = group(dets, gts);
    let cats: Vec<u64> = g.categories.iter().copied().collect();
    let rows: Vec<(u64, Option<Vec<f64>>)> = cats
        .par_iter()
        .map(|&c| {
            let aps: Option<Vec<f64>> = iou_thresholds
                .iter()
                .map(|&t| {
                    let m = match_category(&g, c, t, min_size, f64::NEG_INFINITY);
                    average_precision(&m.scored, m.relevant_gts, interpolation).map(|ap| 100.0 * ap)
                })
                .collect();
            (c, aps)
        })
        .collect();
    let mut per_category = BTreeMap::new();
    let mut excluded = Vec::new();
    for (c, aps) in rows {
        match aps {
            Some(a) => {
                per_category.insert(c, a);
            }
            None => excluded.push(c),
        }
    }
    if !excluded.is_empty() {
        log::warn!(
            "{} categories without relevant ground truth excluded from the mean: {:?}",
            excluded.len(),
            excluded
        );
    }
    let n = per_category.len();
    let map_per_threshold: Vec<f64> = (0..iou_thresholds.len())
        .map(|t| {
            if n == 0 {
                0.0
            } else {
                per_category.values().map(|a| a[t]).sum::<f64>() / n as f64
            }
        })
        .collect();
    let map = if n == 0 || iou_thresholds.is_empty() {
        0.0
    } else {
        per_category
            .values()
            .map(|a| a.iter().sum::<f64>() / a.len() as f64)
            .sum::<f64>()
            / n as f64
    };
    MapSlice {
        iou_thresholds: iou_thresholds.to_vec(),
        interpolation,
        per_category,
        map_per_threshold,
        map,
        excluded_categories: excluded,
    }
}

/// Category-averaged recall (percent) of detections scoring at least
/// `score_threshold`; the miss rate is its complement.
pub fn max_recall(
    dets: &[Detection],
    gts: &[GroundTruth],
    score_threshold: f64,
    iou_threshold: f64,
    min_size: f64,
) -> f64 {
    let g = group(dets, gts);
    let recalls: Vec<f64> = g
        .categories
        .iter()
        .filter_map(|&c| {
            let m = match_category(&g, c, iou_threshold, min_size, score_threshold);
            (m.relevant_gts > 0).then(|| m.tp as f64 / m.relevant_gts as f64)
        })
        .collect();
    if recalls.is_empty() {
        0.0
    } else {
        100.0 * recalls.iter().sum::<f64>() / recalls.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: [f64; 10],
    pub primary_iou: f64,
    pub min_size: f64,
    pub max_recall_score: f64,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let t = coco_iou_thresholds();
        EvalConfig {
            iou_thresholds: t.try_into().expect("ten thresholds"),
            primary_iou: 0.5,
            min_size: DFG_MIN_SIZE,
            max_recall_score: MAX_RECALL_SCORE,
            interpolation: Interpolation::AllPoints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryReport {
    pub category_id: u64,
    pub relevant_gts: usize,
    pub ignored_gts: usize,
    /// AP (percent) at each threshold of the config.
    pub ap: Vec<f64>,
    pub ap50: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub ignored_detections: usize,
    pub max_recall: f64,
    pub best_f: BestF,
    #[serde(skip)]
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub ignored_detections: usize,
    pub ignored_gts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub categories: Vec<CategoryReport>,
    pub excluded_categories: Vec<u64>,
    pub map50: f64,
    pub map50_95: f64,
    pub max_recall: f64,
    /// Category means of the best-F operating points (fractions).
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub false_positive_rate: f64,
    pub miss_rate: f64,
    /// Counts at the primary IoU threshold.
    pub totals: Totals,
}

/// Full report. Both headline numbers use `cfg.interpolation`, which keeps
/// mAP50:95 at or below mAP50.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], cfg: &EvalConfig) -> EvalReport {
    let g = group(dets, gts);
    let cats: Vec<u64> = g.categories.iter().copied().collect();
    let rows: Vec<Option<CategoryReport>> = cats
        .par_iter()
        .map(|&c| {
            let primary = match_category(&g, c, cfg.primary_iou, cfg.min_size, f64::NEG_INFINITY);
            if primary.relevant_gts == 0 {
                return None;
            }
            let ap: Vec<f64> = cfg
                .iou_thresholds
                .iter()
                .map(|&t| {
                    let m = match_category(&g, c, t, cfg.min_size, f64::NEG_INFINITY);
                    100.0 * curve_ap(&pr_curve(&m.scored, m.relevant_gts), cfg.interpolation)
                })
                .collect();
            let curve = pr_curve(&primary.scored, primary.relevant_gts);
            let ap50 = 100.0 * curve_ap(&curve, cfg.interpolation);
            let thresholded =
                match_category(&g, c, cfg.primary_iou, cfg.min_size, cfg.max_recall_score);
            Some(CategoryReport {
                category_id: c,
                relevant_gts: primary.relevant_gts,
                ignored_gts: primary.ignored_gts,
                ap,
                ap50,
                true_positives: primary.tp,
                false_positives: primary.fp,
                false_negatives: primary.fn_,
                ignored_detections: primary.ignored_dets,
                max_recall: 100.0 * thresholded.tp as f64 / thresholded.relevant_gts as f64,
                best_f: best_f_measure(&curve),
                curve,
            })
        })
        .collect();
    let excluded: Vec<u64> = cats
        .iter()
        .zip(&rows)
        .filter(|(_, r)| r.is_none())
        .map(|(&c, _)| c)
        .collect();
    if !excluded.is_empty() {
        log::warn!("categories without relevant ground truth excluded: {excluded:?}");
    }
    let categories: Vec<CategoryReport> = rows.into_iter().flatten().collect();
    let n = categories.len().max(1) as f64;
    let mean = |f: &dyn Fn(&CategoryReport) -> f64| categories.iter().map(f).sum::<f64>() / n;
    let totals = Totals {
        true_positives: categories.iter().map(|c| c.true_positives).sum(),
        false_positives: categories.iter().map(|c| c.false_positives).sum(),
        false_negatives: categories.iter().map(|c| c.false_negatives).sum(),
        ignored_detections: categories.iter().map(|c| c.ignored_detections).sum(),
        ignored_gts: categories.iter().map(|c| c.ignored_gts).sum(),
    };
    EvalReport {
        config: *cfg,
        map50: mean(&|c| c.ap50),
        map50_95: mean(&|c| c.ap.iter().sum::<f64>() / c.ap.len() as f64),
        max_recall: mean(&|c| c.max_recall),
        precision: mean(&|c| c.best_f.precision),
        recall: mean(&|c| c.best_f.recall),
        f_measure: mean(&|c| c.best_f.f_measure),
        false_positive_rate: mean(&|c| c.best_f.false_positive_rate),
        miss_rate: mean(&|c| c.best_f.miss_rate),
        categories,
        excluded_categories: excluded,
        totals,
    }
}

impl EvalReport {
    /// Plain-text summary in the layout of a results table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<22}{:>10}", "metric", "value");
        let _ = writeln!(s, "{}", "-".repeat(32));
        for (name, v) in [
            ("mAP50", self.map50),
            ("mAP50:95", self.map50_95),
            ("Max recall", self.max_recall),
            ("Precision @ best F", 100.0 * self.precision),
            ("Recall @ best F", 100.0 * self.recall),
            ("F-measure", 100.0 * self.f_measure),
            ("False-positive rate", 100.0 * self.false_positive_rate),
            ("Miss rate", 100.0 * self.miss_rate),
        ] {
            let _ = writeln!(s, "{name:<22}{v:>10.1}");
        }
        let _ = writeln!(
            s,
            "categories: {} evaluated, {} excluded; TP {} FP {} FN {} ignored {}",
            self.categories.len(),
            self.excluded_categories.len(),
            self.totals.true_positives,
            self.totals.false_positives,
            self.totals.false_negatives,
            self.totals.ignored_detections
        );
        s
    }

    /// CSV of the primary-IoU precision-recall curves.
    pub fn pr_csv(&self) -> String {
        let mut s = String::from("category_id,score,recall,precision\n");
        for c in &self.categories {
            for p in &c.curve.points {
                let _ = writeln!(s, "{},{},{},{}", c.category_id, p.score, p.recall, p.precision);
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryWeighting {
    /// Every category counts once.
    #[default]
    Equal,
    /// Pooled over instances.
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalOptions {
    /// Keep ground truths whose shorter side lies in `[min, max]`.
    pub size_band: Option<(f64, f64)>,
    pub min_size: f64,
    pub weighting: CategoryWeighting,
}

impl Default for ProposalOptions {
    fn default() -> Self {
        ProposalOptions {
            size_band: None,
            min_size: DFG_MIN_SIZE,
            weighting: CategoryWeighting::Equal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallGrid {
    pub top_n: Vec<usize>,
    pub iou_thresholds: Vec<f64>,
    /// `recall[n][t]` in percent.
    pub recall: Vec<Vec<f64>>,
    pub ground_truths: usize,
    pub categories: usize,
}

impl RecallGrid {
    pub fn miss_rate(&self, n: usize, t: usize) -> f64 {
        100.0 - self.recall[n][t]
    }
}

/// Recall of the top-N proposals per image (by objectness) for every N and
/// IoU threshold. Proposals are class-agnostic; recall is computed per
/// ground-truth category and averaged.
pub fn proposal_recall(
    proposals: &[RoiCandidate],
    gts: &[GroundTruth],
    top_n: &[usize],
    iou_thresholds: &[f64],
    opts: &ProposalOptions,
) -> RecallGrid {
    let mut by_image: HashMap<u64, Vec<&RoiCandidate>> = HashMap::new();
    for p in proposals {
        by_image.entry(p.image_id.unwrap_or(0)).or_default().push(p);
    }
    for v in by_image.values_mut() {
        v.sort_by(|a, b| b.objectness.total_cmp(&a.objectness));
    }
    let max_n = top_n.iter().copied().max().unwrap_or(0);

    // covered[c] = per gt, the list of (N index, best IoU within the top N)
    let mut per_category: BTreeMap<u64, Vec<Vec<f64>>> = BTreeMap::new();
    let mut count = 0;
    for gt in gts {
        if gt.is_ignored(opts.min_size) {
            continue;
        }
        if let Some((lo, hi)) = opts.size_band {
            let s = gt.bbox.min_side();
            if s < lo || s > hi {
                continue;
            }
        }
        count += 1;
        let props = by_image.get(&gt.image_id).map(Vec::as_slice).unwrap_or(&[]);
        let limit = props.len().min(max_n);
        let mut running = Vec::with_capacity(limit);
        let mut best = 0.0f64;
        for p in &props[..limit] {
            best = best.max(p.bbox.iou(&gt.bbox));
            running.push(best);
        }
        let best_at: Vec<f64> = top_n
            .iter()
            .map(|&n| {
                let k = n.min(running.len());
                if k == 0 {
                    0.0
                } else {
                    running[k - 1]
                }
            })
            .collect();
        per_category.entry(gt.category_id).or_default().push(best_at);
    }

    let recall = (0..top_n.len())
        .map(|ni| {
            iou_thresholds
                .iter()
                .map(|&t| {
                    let hits = |gts: &Vec<Vec<f64>>| gts.iter().filter(|b| b[ni] >= t).count();
                    let r = match opts.weighting {
                        CategoryWeighting::Equal => {
                            let rs: Vec<f64> = per_category
                                .values()
                                .map(|v| hits(v) as f64 / v.len() as f64)
                                .collect();
                            if rs.is_empty() {
                                0.0
                            } else {
                                rs.iter().sum::<f64>() / rs.len() as f64
                            }
                        }
                        CategoryWeighting::Instance => {
                            let h: usize = per_category.values().map(hits).sum();
                            if count == 0 {
                                0.0
                            } else {
                                h as f64 / count as f64
                            }
                        }
                    };
                    100.0 * r
                })
                .collect()
        })
        .collect();
    RecallGrid {
        top_n: top_n.to_vec(),
        iou_thresholds: iou_thresholds.to_vec(),
        recall,
        ground_truths: count,
        categories: per_category.len(),
    }
}
