//! Scene-directory stages behind the command line: filter, track, lift,
//! fuse, evaluate, and the full run comparing keyframe-only labels with
//! tracked labels.
//!
//! Everything is read from and written into the scene directory:
//!
//! ```text
//! masks/frame_NNNNNN.filtered.json   filtered detections
//! tracked/frame_NNNNNN.json          masks with stable track ids
//! tracklog.jsonl  prompts.jsonl      state transitions, prompt ledger
//! replay/window_KKKKKK/...           recorded oracle propagation
//! stage1.glpt  stage2.glpt           lifted labels
//! fused_stageN.glpt  fused_stageN.ply
//! eval_stageN.json  summary.json
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    average_precision, cloud_fragmentation, consistency_stats, gt_instances, pred_instances, EvalConfig,
    EvalReport,
};
use crate::fusion::{transfer_labels, FusionConfig};
use crate::lift::{aggregate_stage1, aggregate_stage2, LiftConfig};
use crate::maskproc::{filter_redundant, split_by_granularity, FilterConfig, MaskSet};
use crate::scene_io::{
    read_labeled_points, read_mask_file, write_labeled_points, write_mask_file, LabeledPoint, LabeledPointSet,
    PointFormat, Scene,
};
use crate::synth::{OraclePropagator, GT_MASK_DIR, GT_POINTS_FILE};
use crate::tracker::{
    keyframe_positions, run_tracking, MaskPropagator, RecordingPropagator, ReplayPropagator, TrackLog,
    TrackerConfig, TrackingOutput,
};

pub const TRACKED_DIR: &str = "tracked";
pub const TRACKLOG_FILE: &str = "tracklog.jsonl";
pub const PROMPTS_FILE: &str = "prompts.jsonl";
pub const REPLAY_DIR: &str = "replay";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PropagatorKind {
    #[default]
    Oracle,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub filter: FilterConfig,
    pub tracker: TrackerConfig,
    pub lift: LiftConfig,
    pub fusion: FusionConfig,
    pub eval: EvalConfig,
    pub propagator: PropagatorKind,
    /// Replay root relative to the scene directory.
    pub replay_dir: String,
    /// Boundary erosion probability for the oracle propagator.
    pub oracle_erosion: f64,
    /// Record oracle propagation under `replay_dir`.
    pub record_replay: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            filter: FilterConfig::default(),
            tracker: TrackerConfig::default(),
            lift: LiftConfig::default(),
            fusion: FusionConfig::default(),
            eval: EvalConfig::default(),
            propagator: PropagatorKind::Oracle,
            replay_dir: REPLAY_DIR.into(),
            oracle_erosion: 0.0,
            record_replay: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.tracker.validate()?;
        self.lift.validate()?;
        self.fusion.validate()?;
        self.eval.validate()?;
        if !(0.0..=1.0).contains(&self.oracle_erosion) {
            return Err(Error::InvalidConfig("oracle_erosion must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::schema(e.path().to_string(), e.into_inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    write_text(path, &s)
}

fn frame_name(frame: usize) -> String {
    format!("frame_{frame:06}.json")
}

fn filtered_rel(mask_path: &str) -> String {
    match mask_path.strip_suffix(".json") {
        Some(stem) => format!("{stem}.filtered.json"),
        None => format!("{mask_path}.filtered.json"),
    }
}

/// Removes redundant fine detections in every frame that has a mask file
/// and writes `<mask file stem>.filtered.json` next to it. Masks without a
/// granularity tag count as coarse.
pub fn filter_scene(scene: &Scene, cfg: &FilterConfig) -> Result<BTreeMap<usize, MaskSet>> {
    cfg.validate()?;
    let mut out = BTreeMap::new();
    for f in &scene.manifest.frames {
        let Some(mp) = &f.mask_path else { continue };
        let masks = read_mask_file(&scene.resolve(mp), scene.dims())?;
        let (fine, coarse) = split_by_granularity(f.frame_index, &masks);
        let kept = filter_redundant(&fine, &coarse, cfg)?;
        write_mask_file(&scene.resolve(&filtered_rel(mp)), &kept.masks)?;
        out.insert(f.frame_index, MaskSet::new(f.frame_index, kept.masks));
    }
    Ok(out)
}

/// Filtered detections at the keyframes. Uses the filtered file when one
/// exists and filters on the fly otherwise; keyframes without any mask
/// file are left out.
pub fn keyframe_detections(scene: &Scene, cfg: &RunConfig) -> Result<BTreeMap<usize, MaskSet>> {
    let mut out = BTreeMap::new();
    for pos in keyframe_positions(scene.manifest.frame_count(), cfg.tracker.stride) {
        let f = &scene.manifest.frames[pos];
        let Some(mp) = &f.mask_path else { continue };
        let filtered = scene.resolve(&filtered_rel(mp));
        let masks = if filtered.exists() {
            read_mask_file(&filtered, scene.dims())?
        } else {
            let masks = read_mask_file(&scene.resolve(mp), scene.dims())?;
            let (fine, coarse) = split_by_granularity(f.frame_index, &masks);
            filter_redundant(&fine, &coarse, &cfg.filter)?.masks
        };
        out.insert(f.frame_index, MaskSet::new(f.frame_index, masks));
    }
    Ok(out)
}

pub fn read_gt_masks(scene: &Scene) -> Result<Vec<MaskSet>> {
    scene
        .manifest
        .frames
        .iter()
        .map(|f| {
            let p = scene.root.join(GT_MASK_DIR).join(frame_name(f.frame_index));
            Ok(MaskSet::new(f.frame_index, read_mask_file(&p, scene.dims())?))
        })
        .collect()
}

/// Tracks the scene and writes tracked masks, the tracklog and the prompt
/// ledger.
pub fn track_scene(scene: &Scene, cfg: &RunConfig) -> Result<TrackingOutput> {
    cfg.validate()?;
    let detections = keyframe_detections(scene, cfg)?;
    let replay_root = scene.resolve(&cfg.replay_dir);
    let mut propagator: Box<dyn MaskPropagator> = match cfg.propagator {
        PropagatorKind::Replay => Box::new(ReplayPropagator::new(replay_root, scene.dims())),
        PropagatorKind::Oracle => {
            let oracle = OraclePropagator::new(&read_gt_masks(scene)?).with_erosion(cfg.oracle_erosion, cfg.seed);
            if cfg.record_replay {
                if replay_root.exists() {
                    fs::remove_dir_all(&replay_root).map_err(|e| Error::io(&replay_root, e))?;
                }
                Box::new(RecordingPropagator { inner: oracle, root: replay_root })
            } else {
                Box::new(oracle)
            }
        }
    };
    let out = run_tracking(&scene.manifest, &detections, propagator.as_mut(), &cfg.tracker)?;
    let dir = scene.resolve(TRACKED_DIR);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for set in &out.frames {
        write_mask_file(&dir.join(frame_name(set.frame_index)), &set.masks)?;
    }
    out.log.write(&scene.resolve(TRACKLOG_FILE))?;
    out.ledger.write(&scene.resolve(PROMPTS_FILE))?;
    Ok(out)
}

pub fn read_tracked(scene: &Scene) -> Result<Vec<MaskSet>> {
    scene
        .manifest
        .frames
        .iter()
        .map(|f| {
            let p = scene.resolve(TRACKED_DIR).join(frame_name(f.frame_index));
            Ok(MaskSet::new(f.frame_index, read_mask_file(&p, scene.dims())?))
        })
        .collect()
}

pub fn stage_file(stage: u8) -> String {
    format!("stage{stage}.glpt")
}

pub fn fused_file(stage: u8, ext: &str) -> String {
    format!("fused_stage{stage}.{ext}")
}

fn write_points(points: &LabeledPointSet, path: &Path) -> Result<()> {
    let bytes = points.to_binary();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Lifts stage 1 (filtered keyframe detections, one instance per mask) or
/// stage 2 (tracked masks over all subsampled frames, one instance per
/// track) and writes `stageN.glpt`.
pub fn lift_scene(scene: &Scene, stage: u8, cfg: &RunConfig) -> Result<LabeledPointSet> {
    cfg.lift.validate()?;
    let points = match stage {
        1 => {
            let sets: Vec<MaskSet> = keyframe_detections(scene, cfg)?.into_values().collect();
            aggregate_stage1(scene, &sets, &cfg.lift)?
        }
        2 => aggregate_stage2(scene, &read_tracked(scene)?, &cfg.lift)?,
        s => return Err(Error::InvalidConfig(format!("stage must be 1 or 2, got {s}"))),
    };
    write_points(&points, &scene.resolve(&stage_file(stage)))?;
    Ok(points)
}

/// Per-point labels of `full_cloud` from the stage's lifted points, plus
/// the fused cloud after confidence filtering; written as `.glpt` and
/// colored `.ply`.
pub fn fuse_scene_dir(
    scene: &Scene,
    stage: u8,
    full_cloud: &LabeledPointSet,
    cfg: &FusionConfig,
) -> Result<LabeledPointSet> {
    let lifted = read_labeled_points(&scene.resolve(&stage_file(stage)))?;
    let coords: Vec<[f64; 3]> = full_cloud.points.iter().map(LabeledPoint::position).collect();
    let labels = transfer_labels(&lifted, &coords, cfg)?;
    let fused = LabeledPointSet::new(
        coords
            .iter()
            .zip(labels)
            .filter_map(|(q, l)| {
                let (id, c) = l?;
                (c as f64 > cfg.tau_conf).then_some(LabeledPoint {
                    x: q[0],
                    y: q[1],
                    z: q[2],
                    instance_id: id,
                    confidence: c,
                })
            })
            .collect(),
    );
    write_points(&fused, &scene.resolve(&fused_file(stage, "glpt")))?;
    if !fused.is_empty() {
        write_labeled_points(&fused, &scene.resolve(&fused_file(stage, "ply")), PointFormat::ColoredPly)?;
    }
    Ok(fused)
}

fn coord_key(p: &LabeledPoint) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
}

/// Scores a predicted cloud against a ground-truth cloud. Points are
/// paired by identical coordinates; predicted points absent from the
/// ground truth are ignored.
pub fn evaluate_clouds(pred: &LabeledPointSet, gt: &LabeledPointSet, cfg: &EvalConfig) -> Result<EvalReport> {
    if gt.is_empty() {
        return Err(Error::MissingGt("ground-truth cloud is empty".into()));
    }
    let index: HashMap<[u64; 3], usize> = gt.points.iter().enumerate().map(|(i, p)| (coord_key(p), i)).collect();
    let mut labels: Vec<Option<(u32, f32)>> = vec![None; gt.len()];
    for p in &pred.points {
        if let Some(&i) = index.get(&coord_key(p)) {
            labels[i] = Some((p.instance_id, p.confidence));
        }
    }
    let preds: Vec<_> = pred_instances(&labels).into_iter().map(|(_, p)| p).collect();
    let gts: Vec<Vec<usize>> = gt_instances(gt).into_iter().map(|(_, g)| g).collect();
    let ap = average_precision(&preds, &gts, cfg)?;
    let mut report = EvalReport::from_ap(ap, preds.len());
    report.fragmentation = Some(cloud_fragmentation(&labels, gt)?);
    Ok(report)
}

pub fn read_gt_cloud(scene: &Scene) -> Result<LabeledPointSet> {
    let p = scene.root.join(GT_POINTS_FILE);
    read_labeled_points(&p).map_err(|e| match e {
        Error::MissingFile(p) => Error::MissingGt(p.display().to_string()),
        other => other,
    })
}

/// Renumbers masks serially across sets, as keyframe-only labelling does.
pub fn serial_ids(sets: &[MaskSet]) -> Vec<MaskSet> {
    let mut next = 0u32;
    sets.iter()
        .map(|s| {
            let masks = s
                .masks
                .iter()
                .map(|m| {
                    next += 1;
                    m.clone().with_track_id(next - 1)
                })
                .collect();
            MaskSet::new(s.frame_index, masks)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub eval: EvalReport,
    /// Distinct best-overlap ids per ground-truth object, minus one, over
    /// the 2D masks the stage was lifted from.
    pub mask_fragmentation: f64,
    pub mask_id_switches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scene_id: String,
    pub frames: usize,
    pub keyframes: usize,
    pub tracks: usize,
    pub transitions: usize,
    pub stage1: StageSummary,
    pub stage2: StageSummary,
}

/// filter → track → lift → fuse → eval for both stages, writing every
/// intermediate artifact and `summary.json`.
pub fn run_pipeline(scene_dir: &Path, cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let scene = Scene::open(scene_dir)?;
    filter_scene(&scene, &cfg.filter)?;
    let tracked = track_scene(&scene, cfg)?;
    let gt_cloud = read_gt_cloud(&scene)?;
    let gt_masks = read_gt_masks(&scene)?;

    let keyframe_sets: Vec<MaskSet> = keyframe_detections(&scene, cfg)?.into_values().collect();
    let mut stages = Vec::new();
    for stage in [1u8, 2] {
        lift_scene(&scene, stage, cfg)?;
        let fused = fuse_scene_dir(&scene, stage, &gt_cloud, &cfg.fusion)?;
        let eval = evaluate_clouds(&fused, &gt_cloud, &cfg.eval)?;
        write_json(&scene.resolve(&format!("eval_stage{stage}.json")), &eval)?;
        let masks = if stage == 1 { serial_ids(&keyframe_sets) } else { tracked.frames.clone() };
        let gt_subset: Vec<MaskSet> =
            gt_masks.iter().filter(|g| masks.iter().any(|m| m.frame_index == g.frame_index)).cloned().collect();
        let stats = consistency_stats(&masks, &gt_subset)?;
        stages.push(StageSummary {
            eval,
            mask_fragmentation: stats.fragmentation,
            mask_id_switches: stats.id_switches,
        });
    }
    let stage2 = stages.pop().unwrap();
    let stage1 = stages.pop().unwrap();
    let summary = RunSummary {
        scene_id: scene.manifest.scene_id.clone(),
        frames: scene.manifest.frame_count(),
        keyframes: keyframe_sets.len(),
        tracks: tracked.state.tracks.len(),
        transitions: tracked.log.len(),
        stage1,
        stage2,
    };
    write_json(&scene.resolve(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Reads a scene's tracklog and checks its lifecycle soundness.
pub fn check_tracklog(scene_dir: &Path) -> Result<TrackLog> {
    let log = TrackLog::read(&scene_dir.join(TRACKLOG_FILE))?;
    log.check_soundness().map_err(Error::InvariantViolation)?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_scene, scenarios, write_scene};

    #[test]
    fn config_defaults_and_unknown_fields() {
        let cfg: RunConfig = serde_json::from_str("{\"tracker\": {\"stride\": 5}}").unwrap();
        assert_eq!(cfg.tracker.stride, 5);
        assert_eq!(cfg.tracker.tau_dorm, 3);
        assert_eq!(cfg.filter.tau_contain, 0.8);
        assert!(serde_json::from_str::<RunConfig>("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn filtered_name() {
        assert_eq!(filtered_rel("masks/frame_000001.json"), "masks/frame_000001.filtered.json");
    }

    #[test]
    fn pipeline_on_boxworld() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = scenarios::boxworld_spec();
        spec.trajectory.truncate(21);
        write_scene(&render_scene(&spec).unwrap(), dir.path()).unwrap();
        let s = run_pipeline(dir.path(), &RunConfig::default()).unwrap();
        check_tracklog(dir.path()).unwrap();
        assert!(s.stage2.eval.ap50 > 0.5, "{s:?}");
        assert!(dir.path().join("fused_stage2.ply").exists());
    }

    #[test]
    fn fused_labels_agree_with_gt_majority() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(&render_scene(&scenarios::ablation_spec(3, 0.5)).unwrap(), dir.path()).unwrap();
        run_pipeline(dir.path(), &RunConfig::default()).unwrap();
        let gt = read_labeled_points(&dir.path().join(GT_POINTS_FILE)).unwrap();
        let fused = read_labeled_points(&dir.path().join(fused_file(2, "glpt"))).unwrap();
        let truth: HashMap<[u64; 3], u32> = gt.points.iter().map(|p| (coord_key(p), p.instance_id)).collect();
        let mut votes: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for p in &fused.points {
            *votes.entry((p.instance_id, truth[&coord_key(p)])).or_default() += 1;
        }
        let mut majority: BTreeMap<u32, usize> = BTreeMap::new();
        for (&(pred, _), &n) in &votes {
            let m = majority.entry(pred).or_default();
            *m = (*m).max(n);
        }
        let agree: usize = majority.values().sum();
        assert!(!fused.is_empty());
        assert!(agree as f64 >= 0.95 * fused.len() as f64, "{agree} of {}", fused.len());
    }
}
