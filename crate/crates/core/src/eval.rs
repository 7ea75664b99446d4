//! HOI triplet matching and mean average precision.
//!
//! Classes are `(action, object category)` pairs. A prediction is a true
//! positive when both its human and object boxes overlap an unmatched
//! ground truth of the same class with IoU strictly above the threshold.
//! AP is the area under the all-point precision envelope.

use std::collections::{BTreeMap, HashMap};

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::output::{GroundTruthFile, GroundTruthTriplet, PredictionFile};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Arithmetic needed for AP: `f64` in production, exact rationals in tests.
pub trait ApScalar: Num + Copy + PartialOrd + FromPrimitive {}

impl<T: Num + Copy + PartialOrd + FromPrimitive> ApScalar for T {}

/// All-point interpolated AP of a ranked hit list (`true` = TP).
///
/// Returns `None` when there are no ground truths.
pub fn ap_from_ranked_hits<T: ApScalar>(hits: &[bool], num_gt: usize) -> Option<T> {
    if num_gt == 0 {
        return None;
    }
    let n_gt = T::from_usize(num_gt)?;
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    for (k, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(T::from_usize(tp)? / T::from_usize(k + 1)?);
        recall.push(T::from_usize(tp)? / n_gt);
    }
    // precision envelope, right to left
    for k in (0..precision.len().saturating_sub(1)).rev() {
        if precision[k + 1] > precision[k] {
            precision[k] = precision[k + 1];
        }
    }
    let mut ap = T::zero();
    let mut prev_recall = T::zero();
    for k in 0..hits.len() {
        if recall[k] != prev_recall {
            ap = ap + (recall[k] - prev_recall) * precision[k];
            prev_recall = recall[k];
        }
    }
    Some(ap)
}

/// AP of `(score, is_tp)` predictions: sorted by descending score, ties in
/// input order.
pub fn average_precision(scored: &[(f64, bool)], num_gt: usize) -> Option<f64> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    let hits: Vec<bool> = order.iter().map(|&i| scored[i].1).collect();
    ap_from_ranked_hits(&hits, num_gt)
}

fn bbox(v: [f32; 4]) -> BBox<f64> {
    BBox {
        x1: v[0] as f64,
        y1: v[1] as f64,
        x2: v[2] as f64,
        y2: v[3] as f64,
    }
}

/// Index of the best unmatched ground truth for a prediction, if any.
///
/// Candidates must match the class and have both IoUs strictly above
/// `threshold`; among them the one with the largest `min(iou_h, iou_o)` wins,
/// lowest index on ties. The winner is marked used.
pub fn match_prediction(
    human_box: [f32; 4],
    object_box: [f32; 4],
    object_category: usize,
    action: usize,
    ground_truths: &[GroundTruthTriplet],
    used: &mut [bool],
    threshold: f64,
) -> Option<usize> {
    let h = bbox(human_box);
    let o = bbox(object_box);
    let mut best: Option<(usize, f64)> = None;
    for (g, gt) in ground_truths.iter().enumerate() {
        if used[g] || gt.object_category != object_category || gt.action != action {
            continue;
        }
        let ih = iou(&h, &bbox(gt.human_box));
        let io = iou(&o, &bbox(gt.object_box));
        if ih > threshold && io > threshold {
            let q = ih.min(io);
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((g, q));
            }
        }
    }
    let (g, _) = best?;
    used[g] = true;
    Some(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub action: usize,
    pub object_category: usize,
    pub ap: Option<f64>,
    pub num_gt: usize,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub iou_threshold: f64,
    pub map: f64,
    pub classes_evaluated: usize,
    pub classes: Vec<ClassAp>,
}

struct Candidate<'a> {
    score: f32,
    image: &'a str,
    human_box: [f32; 4],
    object_box: [f32; 4],
}

fn canonical_cmp(a: &Candidate<'_>, b: &Candidate<'_>) -> std::cmp::Ordering {
    let key = |c: &Candidate<'_>| {
        let mut k = [0u32; 8];
        for (d, v) in k.iter_mut().zip(c.human_box.iter().chain(&c.object_box)) {
            *d = v.to_bits();
        }
        k
    };
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.image.cmp(b.image))
        .then_with(|| key(a).cmp(&key(b)))
}

/// mAP over `(action, object)` classes with at least one ground truth.
///
/// Predictions in each class are ranked by score, with ties ordered by image
/// id and box coordinates, so the report does not depend on file order.
pub fn evaluate(preds: &PredictionFile, gt: &GroundTruthFile, threshold: f64) -> Result<ApReport> {
    let num_actions = gt.num_actions;
    if preds.metadata.num_actions != num_actions {
        return Err(Error::validation(
            "evaluation",
            "metadata.num_actions",
            format!(
                "predictions have {} actions, ground truth {num_actions}",
                preds.metadata.num_actions
            ),
        ));
    }
    let mut gt_by_image: HashMap<&str, &[GroundTruthTriplet]> = HashMap::new();
    let mut num_gt: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for im in &gt.images {
        if gt_by_image.insert(im.image_id.as_str(), &im.hois).is_some() {
            return Err(Error::validation(
                "evaluation",
                "images",
                format!("duplicate ground-truth image `{}`", im.image_id),
            ));
        }
        for (k, h) in im.hois.iter().enumerate() {
            if h.action >= num_actions {
                return Err(Error::validation(
                    "evaluation",
                    format!("{}.hois[{k}].action", im.image_id),
                    format!("action {} >= {num_actions}", h.action),
                ));
            }
            *num_gt.entry((h.action, h.object_category)).or_default() += 1;
        }
    }

    let mut candidates: BTreeMap<(usize, usize), Vec<Candidate<'_>>> = BTreeMap::new();
    let mut seen_images = std::collections::HashSet::new();
    for im in &preds.images {
        if !gt_by_image.contains_key(im.image_id.as_str()) {
            return Err(Error::validation(
                "evaluation",
                "images.image_id",
                format!("prediction image `{}` has no ground-truth entry", im.image_id),
            ));
        }
        if !seen_images.insert(im.image_id.as_str()) {
            return Err(Error::validation(
                "evaluation",
                "images",
                format!("duplicate prediction image `{}`", im.image_id),
            ));
        }
        for (k, p) in im.interactions.iter().enumerate() {
            if p.action_scores.len() != num_actions {
                return Err(Error::validation(
                    "evaluation",
                    format!("{}.interactions[{k}].action_scores", im.image_id),
                    format!("{} scores, expected {num_actions}", p.action_scores.len()),
                ));
            }
            for (a, &s) in p.action_scores.iter().enumerate() {
                candidates.entry((a, p.object_category)).or_default().push(Candidate {
                    score: s,
                    image: &im.image_id,
                    human_box: p.human_box,
                    object_box: p.object_box,
                });
            }
        }
    }

    let mut keys: Vec<(usize, usize)> = num_gt.keys().copied().collect();
    keys.extend(candidates.keys().copied().filter(|k| !num_gt.contains_key(k)));
    keys.sort_unstable();

    let mut classes = Vec::with_capacity(keys.len());
    for (action, object) in keys {
        let n = num_gt.get(&(action, object)).copied().unwrap_or(0);
        let mut cands = candidates.remove(&(action, object)).unwrap_or_default();
        cands.sort_by(canonical_cmp);
        let mut used: HashMap<&str, Vec<bool>> = HashMap::new();
        let mut hits = Vec::with_capacity(cands.len());
        for c in &cands {
            let gts = gt_by_image[c.image];
            let u = used.entry(c.image).or_insert_with(|| vec![false; gts.len()]);
            let hit = match_prediction(c.human_box, c.object_box, object, action, gts, u, threshold).is_some();
            hits.push(hit);
        }
        let tp = hits.iter().filter(|&&h| h).count();
        classes.push(ClassAp {
            action,
            object_category: object,
            ap: ap_from_ranked_hits::<f64>(&hits, n),
            num_gt: n,
            tp,
            fp: hits.len() - tp,
        });
    }
    let aps: Vec<f64> = classes.iter().filter_map(|c| c.ap).collect();
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    Ok(ApReport {
        iou_threshold: threshold,
        map,
        classes_evaluated: aps.len(),
        classes,
    })
}
