//! Class-agnostic instance AP over point memberships, Dice and
//! cross-entropy metrics, and temporal consistency statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskproc::{mask_iou, MaskSet};
use crate::scene_io::LabeledPointSet;

pub const CE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::InvalidConfig("iou_thresholds is empty".into()));
        }
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::InvalidConfig("iou thresholds must lie in (0, 1)".into()));
        }
        if self.iou_thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("iou thresholds must be strictly increasing".into()));
        }
        Ok(())
    }
}

fn sorted_unique(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

fn intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// |pred ∩ gt| / |pred ∪ gt| over point indices.
pub fn instance_iou_3d(pred: &[usize], gt: &[usize]) -> Result<f64> {
    let (p, g) = (sorted_unique(pred), sorted_unique(gt));
    let union = p.len() + g.len();
    if union == 0 {
        return Err(Error::EmptyUniverse);
    }
    let inter = intersection_len(&p, &g);
    Ok(inter as f64 / (union - inter) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredInstance {
    pub points: Vec<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAp {
    pub threshold: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap_mean: f64,
    pub ap_per_threshold: Vec<ThresholdAp>,
    pub ap50: f64,
    pub ap25: f64,
}

/// AP at one threshold. Predictions are visited by descending score (ties
/// by input order); each takes the unmatched ground-truth instance with the
/// highest IoU and counts as a true positive when that IoU exceeds the
/// threshold. The precision envelope is integrated over every recall step.
fn ap_at(gts: &[Vec<usize>], iou: &[Vec<f64>], order: &[usize], threshold: f64) -> f64 {
    let mut matched = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(order.len());
    for &p in order {
        let mut best: Option<(f64, usize)> = None;
        for (g, m) in matched.iter().enumerate() {
            if *m {
                continue;
            }
            let v = iou[p][g];
            if best.is_none_or(|(b, _)| v > b) {
                best = Some((v, g));
            }
        }
        match best {
            Some((v, g)) if v > threshold => {
                matched[g] = true;
                tp.push(true);
            }
            _ => tp.push(false),
        }
    }
    let n_gt = gts.len() as f64;
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / n_gt);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

pub fn average_precision(preds: &[PredInstance], gts: &[Vec<usize>], cfg: &EvalConfig) -> Result<ApReport> {
    cfg.validate()?;
    if gts.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let preds: Vec<(Vec<usize>, f64)> = preds.iter().map(|p| (sorted_unique(&p.points), p.score)).collect();
    let gts: Vec<Vec<usize>> = gts.iter().map(|g| sorted_unique(g)).collect();
    let iou: Vec<Vec<f64>> = preds
        .iter()
        .map(|(p, _)| {
            gts.iter()
                .map(|g| {
                    let inter = intersection_len(p, g);
                    let union = p.len() + g.len() - inter;
                    if union == 0 { 0.0 } else { inter as f64 / union as f64 }
                })
                .collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].1.total_cmp(&preds[a].1).then(a.cmp(&b)));

    let at = |t: f64| ap_at(&gts, &iou, &order, t);
    let per: Vec<ThresholdAp> = cfg.iou_thresholds.iter().map(|&t| ThresholdAp { threshold: t, ap: at(t) }).collect();
    Ok(ApReport {
        ap_mean: per.iter().map(|t| t.ap).sum::<f64>() / per.len() as f64,
        ap_per_threshold: per,
        ap50: at(0.5),
        ap25: at(0.25),
    })
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    Ok(())
}

/// 2 Σ p·g / (Σ p + Σ g); 1 when both sums are zero.
pub fn dice_metric(pred_soft: &[f64], gt: &[bool]) -> Result<f64> {
    check_len(pred_soft.len(), gt.len())?;
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut sg = 0.0;
    for (&p, &g) in pred_soft.iter().zip(gt) {
        sp += p;
        if g {
            inter += p;
            sg += 1.0;
        }
    }
    if sp + sg == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter / (sp + sg))
}

/// Mean binary cross-entropy with predictions clamped to [ε, 1 − ε]; 0 for
/// empty input.
pub fn cross_entropy_metric(pred_soft: &[f64], gt: &[bool]) -> Result<f64> {
    check_len(pred_soft.len(), gt.len())?;
    if gt.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred_soft
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let p = p.clamp(CE_EPS, 1.0 - CE_EPS);
            if g { -p.ln() } else { -(1.0 - p).ln() }
        })
        .sum();
    Ok(sum / gt.len() as f64)
}

/// Binary cross-entropy between per-instance objectness scores and whether
/// each instance is real.
pub fn objectness_metric(scores: &[f64], is_object: &[bool]) -> Result<f64> {
    cross_entropy_metric(scores, is_object)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_dice: f64,
    pub lambda_ce: f64,
    pub lambda_obj: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_dice: 1.0, lambda_ce: 1.0, lambda_obj: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_dice, self.lambda_ce, self.lambda_obj];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidConfig("loss weights must be >= 0 with at least one > 0".into()));
        }
        Ok(())
    }

    /// λ_dice (1 − Dice) + λ_ce CE + λ_obj objectness.
    pub fn combine(&self, mask_pred: &[f64], mask_gt: &[bool], obj_scores: &[f64], obj_targets: &[bool]) -> Result<f64> {
        self.validate()?;
        Ok(self.lambda_dice * (1.0 - dice_metric(mask_pred, mask_gt)?)
            + self.lambda_ce * cross_entropy_metric(mask_pred, mask_gt)?
            + self.lambda_obj * objectness_metric(obj_scores, obj_targets)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyStats {
    pub id_switches: usize,
    pub fragmentation: f64,
    /// Number of distinct tracks a ground-truth object was assigned to,
    /// mapped to how many objects had that count.
    pub tracks_per_gt_object: BTreeMap<usize, usize>,
}

/// Follows each ground-truth object (mask `track_id` = object id) through
/// the frames and records which predicted track overlaps it best (highest
/// IoU, ties to the smaller track id). A switch is a frame whose best track
/// differs from the object's previous best. Fragmentation is the mean
/// number of distinct best tracks per object minus one, over objects that
/// were matched at least once.
pub fn consistency_stats(pred: &[MaskSet], gt: &[MaskSet]) -> Result<ConsistencyStats> {
    if gt.iter().all(|s| s.is_empty()) {
        return Err(Error::MissingGt("no ground-truth masks".into()));
    }
    let pred_by_frame: BTreeMap<usize, &MaskSet> = pred.iter().map(|s| (s.frame_index, s)).collect();
    let mut frames: Vec<&MaskSet> = gt.iter().collect();
    frames.sort_by_key(|s| s.frame_index);

    let mut last: BTreeMap<u32, u32> = BTreeMap::new();
    let mut seen: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    let mut switches = 0;
    for g in frames {
        for gm in &g.masks {
            let obj = gm.track_id.ok_or(Error::MissingTrackId { frame: g.frame_index })?;
            seen.entry(obj).or_default();
            let Some(p) = pred_by_frame.get(&g.frame_index) else { continue };
            let mut best: Option<(f64, u32)> = None;
            for pm in &p.masks {
                let id = pm.track_id.ok_or(Error::MissingTrackId { frame: p.frame_index })?;
                let v = mask_iou(pm, gm)?;
                if v > 0.0 && best.is_none_or(|(b, bid)| v > b || (v == b && id < bid)) {
                    best = Some((v, id));
                }
            }
            if let Some((_, id)) = best {
                if last.insert(obj, id).is_some_and(|prev| prev != id) {
                    switches += 1;
                }
                seen.entry(obj).or_default().insert(id);
            }
        }
    }
    let mut hist = BTreeMap::new();
    for ids in seen.values() {
        *hist.entry(ids.len()).or_insert(0) += 1;
    }
    let matched: Vec<usize> = seen.values().map(BTreeSet::len).filter(|&n| n > 0).collect();
    let fragmentation = if matched.is_empty() {
        0.0
    } else {
        matched.iter().sum::<usize>() as f64 / matched.len() as f64 - 1.0
    };
    Ok(ConsistencyStats { id_switches: switches, fragmentation, tracks_per_gt_object: hist })
}

/// Ground-truth instances of a labeled cloud as index sets, by ascending id.
pub fn gt_instances(points: &LabeledPointSet) -> Vec<(u32, Vec<usize>)> {
    let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.points.iter().enumerate() {
        by_id.entry(p.instance_id).or_default().push(i);
    }
    by_id.into_iter().collect()
}

/// Predicted instances from per-point labels over a shared universe. The
/// score of an instance is its mean point confidence.
pub fn pred_instances(labels: &[Option<(u32, f32)>]) -> Vec<(u32, PredInstance)> {
    let mut by_id: BTreeMap<u32, (Vec<usize>, f64)> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some((id, c)) = l {
            let e = by_id.entry(*id).or_default();
            e.0.push(i);
            e.1 += *c as f64;
        }
    }
    by_id
        .into_iter()
        .map(|(id, (points, sum))| {
            let score = sum / points.len() as f64;
            (id, PredInstance { points, score })
        })
        .collect()
}

/// Mean number of distinct predicted ids covering each ground-truth object,
/// minus one, over objects with at least one labeled point.
pub fn cloud_fragmentation(labels: &[Option<(u32, f32)>], gt: &LabeledPointSet) -> Result<f64> {
    check_len(labels.len(), gt.len())?;
    let mut ids: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for (l, g) in labels.iter().zip(&gt.points) {
        if let Some((id, _)) = l {
            ids.entry(g.instance_id).or_default().insert(*id);
        }
    }
    if ids.is_empty() {
        return Ok(0.0);
    }
    Ok(ids.values().map(BTreeSet::len).sum::<usize>() as f64 / ids.len() as f64 - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap_mean: f64,
    pub ap_per_threshold: Vec<ThresholdAp>,
    pub ap50: f64,
    pub ap25: f64,
    pub instances: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_switches: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fragmentation: Option<f64>,
}

impl EvalReport {
    pub fn from_ap(ap: ApReport, instances: usize) -> Self {
        EvalReport {
            ap_mean: ap.ap_mean,
            ap_per_threshold: ap.ap_per_threshold,
            ap50: ap.ap50,
            ap25: ap.ap25,
            instances,
            id_switches: None,
            fragmentation: None,
        }
    }
}
