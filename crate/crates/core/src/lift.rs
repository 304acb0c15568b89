//! Back-projection of 2D masks into world-space point sets and per-stage
//! aggregation of those sets into labeled clouds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskproc::MaskSet;
use crate::scene_io::{CameraIntrinsics, DepthMap, LabeledPoint, LabeledPointSet, Mask, Pose4x4, Scene};

/// Everything needed to lift the masks of one frame.
#[derive(Debug, Clone)]
pub struct CameraFrame {
    pub frame_index: usize,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: Pose4x4,
    pub depth: DepthMap,
}

/// Source of per-frame camera data, keyed by frame index.
pub trait FrameSource: Sync {
    fn camera_frame(&self, frame_index: usize) -> Result<CameraFrame>;
}

impl FrameSource for Scene {
    fn camera_frame(&self, frame_index: usize) -> Result<CameraFrame> {
        let pos = self.manifest.position(frame_index).ok_or_else(|| {
            Error::InvariantViolation(format!("frame {frame_index} not in manifest"))
        })?;
        Scene::camera_frame(self, pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftConfig {
    /// Point sets smaller than this are discarded.
    pub min_points: usize,
    /// Stage-2 lifts every n-th frame (by position); 1 lifts all frames.
    pub frame_subsample: usize,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            min_points: 100,
            frame_subsample: 1,
        }
    }
}

impl LiftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_subsample == 0 {
            return Err(Error::InvalidConfig("frame_subsample must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstancePointSet {
    pub instance_id: u32,
    pub points: Vec<[f64; 3]>,
    pub source_frames: Vec<usize>,
    pub confidence: f32,
}

/// Pixel `(u, v)` at metric depth to world coordinates:
/// camera point `d * ((u - cx) / fx, (v - cy) / fy, 1)`, then the
/// camera-to-world pose.
#[inline]
pub fn backproject_pixel(
    u: f64,
    v: f64,
    depth_m: f64,
    k: &CameraIntrinsics,
    e: &Pose4x4,
) -> Result<[f64; 3]> {
    if !(depth_m > 0.0) {
        return Err(Error::InvalidDepth(depth_m));
    }
    Ok(backproject_unchecked(u, v, depth_m, k, e))
}

#[inline]
fn backproject_unchecked(u: f64, v: f64, d: f64, k: &CameraIntrinsics, e: &Pose4x4) -> [f64; 3] {
    let cam = [d * (u - k.cx) / k.fx, d * (v - k.cy) / k.fy, d];
    e.transform_point(cam)
}

/// World point to `(u, v, depth)` through the inverse pose and intrinsics.
pub fn project_point(p: [f64; 3], k: &CameraIntrinsics, e: &Pose4x4) -> (f64, f64, f64) {
    k.project(e.inverse_rigid().transform_point(p))
}

/// Lifts every foreground pixel with a valid depth sample. Returns `None`
/// when fewer than `min_points` survive.
pub fn lift_mask(mask: &Mask, frame: &CameraFrame, cfg: &LiftConfig) -> Result<Option<InstancePointSet>> {
    let dims = (frame.depth.width, frame.depth.height);
    if mask.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: mask.dims(),
        });
    }
    let mut points = Vec::with_capacity(mask.area() as usize);
    let (k, e) = (&frame.intrinsics, &frame.extrinsics);
    mask.for_each_pixel(|x, y| {
        if let Some(d) = frame.depth.meters(x, y) {
            points.push(backproject_unchecked(x as f64, y as f64, d, k, e));
        }
    });
    if points.len() < cfg.min_points || points.is_empty() {
        return Ok(None);
    }
    Ok(Some(InstancePointSet {
        instance_id: mask.track_id.unwrap_or(0),
        points,
        source_frames: vec![frame.frame_index],
        confidence: mask.score.unwrap_or(1.0) as f32,
    }))
}

/// Lifts every mask of every set, in `(frame, mask)` order. `None` entries
/// are discarded sets.
fn lift_sets(
    source: &dyn FrameSource,
    sets: &[&MaskSet],
    cfg: &LiftConfig,
) -> Result<Vec<Vec<Option<InstancePointSet>>>> {
    sets.par_iter()
        .map(|set| {
            if set.is_empty() {
                return Ok(vec![]);
            }
            let frame = source.camera_frame(set.frame_index)?;
            set.masks
                .iter()
                .map(|m| lift_mask(m, &frame, cfg))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn to_labeled(sets: impl IntoIterator<Item = InstancePointSet>) -> LabeledPointSet {
    let mut out = Vec::new();
    for s in sets {
        out.extend(s.points.iter().map(|p| LabeledPoint {
            x: p[0],
            y: p[1],
            z: p[2],
            instance_id: s.instance_id,
            confidence: s.confidence,
        }));
    }
    LabeledPointSet::new(out)
}

/// Stage-1 point sets: one instance per surviving `(keyframe, mask)`,
/// numbered serially. No identity is shared across frames.
pub fn stage1_instances(
    source: &dyn FrameSource,
    keyframe_sets: &[MaskSet],
    cfg: &LiftConfig,
) -> Result<Vec<InstancePointSet>> {
    let mut sorted: Vec<&MaskSet> = keyframe_sets.iter().collect();
    sorted.sort_by_key(|s| s.frame_index);
    let lifted = lift_sets(source, &sorted, cfg)?;
    let mut next = 0u32;
    let mut out = Vec::new();
    for mut set in lifted.into_iter().flatten().flatten() {
        set.instance_id = next;
        next += 1;
        out.push(set);
    }
    Ok(out)
}

pub fn aggregate_stage1(
    source: &dyn FrameSource,
    keyframe_sets: &[MaskSet],
    cfg: &LiftConfig,
) -> Result<LabeledPointSet> {
    Ok(to_labeled(stage1_instances(source, keyframe_sets, cfg)?))
}

/// Stage-2 point sets over all (subsampled) frames; the instance id is the
/// track id, so observations of one track from many views share a label.
pub fn stage2_instances(
    source: &dyn FrameSource,
    consistent_sets: &[MaskSet],
    cfg: &LiftConfig,
) -> Result<Vec<InstancePointSet>> {
    cfg.validate()?;
    for set in consistent_sets {
        if set.masks.iter().any(|m| m.track_id.is_none()) {
            return Err(Error::MissingTrackId {
                frame: set.frame_index,
            });
        }
    }
    let mut sorted: Vec<&MaskSet> = consistent_sets.iter().collect();
    sorted.sort_by_key(|s| s.frame_index);
    let selected: Vec<&MaskSet> = sorted
        .into_iter()
        .enumerate()
        .filter(|(pos, _)| pos % cfg.frame_subsample == 0)
        .map(|(_, s)| s)
        .collect();
    let lifted = lift_sets(source, &selected, cfg)?;
    Ok(lifted.into_iter().flatten().flatten().collect())
}

pub fn aggregate_stage2(
    source: &dyn FrameSource,
    consistent_sets: &[MaskSet],
    cfg: &LiftConfig,
) -> Result<LabeledPointSet> {
    Ok(to_labeled(stage2_instances(source, consistent_sets, cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::{encode_rle, Bitmap};
    use std::collections::HashMap;

    fn unit_k() -> CameraIntrinsics {
        CameraIntrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0 }
    }

    #[test]
    fn backproject_examples() {
        let p = backproject_pixel(0.0, 0.0, 2.0, &unit_k(), &Pose4x4::IDENTITY).unwrap();
        assert_eq!(p, [0.0, 0.0, 2.0]);
        let k = CameraIntrinsics { fx: 2.0, fy: 1.0, cx: 1.0, cy: 0.0 };
        assert_eq!(backproject_pixel(2.0, 1.0, 4.0, &k, &Pose4x4::IDENTITY).unwrap(), [2.0, 4.0, 4.0]);
        let e = Pose4x4::translation([1.0, 0.0, 0.0]);
        assert_eq!(backproject_pixel(2.0, 1.0, 4.0, &k, &e).unwrap(), [3.0, 4.0, 4.0]);
        assert!(matches!(
            backproject_pixel(0.0, 0.0, 0.0, &k, &e),
            Err(Error::InvalidDepth(_))
        ));
    }

    fn frame(w: u32, h: u32, depth: Vec<u16>) -> CameraFrame {
        CameraFrame {
            frame_index: 0,
            intrinsics: CameraIntrinsics { fx: 100.0, fy: 100.0, cx: w as f64 / 2.0, cy: h as f64 / 2.0 },
            extrinsics: Pose4x4::IDENTITY,
            depth: DepthMap::new(w, h, depth, 0.001).unwrap(),
        }
    }

    fn first_n_mask(w: u32, h: u32, n: usize) -> Mask {
        let mut b = Bitmap::new(w, h);
        b.data[..n].fill(true);
        encode_rle(&b).unwrap()
    }

    #[test]
    fn min_points_rule() {
        let (w, h) = (20, 10);
        let mask = first_n_mask(w, h, 150);
        let all_valid = frame(w, h, vec![1000; 200]);
        let set = lift_mask(&mask, &all_valid, &LiftConfig::default()).unwrap().unwrap();
        assert_eq!(set.points.len(), 150);

        let mut depth = vec![1000u16; 200];
        depth[..60].fill(0);
        let partial = frame(w, h, depth);
        assert!(lift_mask(&mask, &partial, &LiftConfig::default()).unwrap().is_none());
        let loose = LiftConfig { min_points: 0, ..Default::default() };
        let set = lift_mask(&mask, &partial, &loose).unwrap().unwrap();
        assert_eq!(set.points.len(), 90);
    }

    #[test]
    fn lift_rejects_mismatched_mask() {
        let mask = first_n_mask(4, 4, 3);
        assert!(matches!(
            lift_mask(&mask, &frame(5, 4, vec![1; 20]), &LiftConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    struct Frames(HashMap<usize, CameraFrame>);

    impl FrameSource for Frames {
        fn camera_frame(&self, i: usize) -> Result<CameraFrame> {
            Ok(self.0[&i].clone())
        }
    }

    fn frames(indices: &[usize]) -> Frames {
        Frames(
            indices
                .iter()
                .map(|&i| {
                    let mut f = frame(20, 10, vec![1000 + i as u16; 200]);
                    f.frame_index = i;
                    f.extrinsics = Pose4x4::translation([i as f64, 0.0, 0.0]);
                    (i, f)
                })
                .collect(),
        )
    }

    #[test]
    fn stage1_serial_ids() {
        let src = frames(&[0, 10, 20]);
        let cfg = LiftConfig { min_points: 0, ..Default::default() };
        let two = MaskSet::new(0, vec![first_n_mask(20, 10, 5), first_n_mask(20, 10, 7)]);
        let out = aggregate_stage1(&src, &[two], &cfg).unwrap();
        assert_eq!(out.instance_ids(), vec![0, 1]);
        assert_eq!(out.len(), 12);

        // the same object in three keyframes yields three instances
        let sets: Vec<MaskSet> = [0, 10, 20]
            .iter()
            .map(|&i| MaskSet::new(i, vec![first_n_mask(20, 10, 4).with_track_id(7)]))
            .collect();
        assert_eq!(aggregate_stage1(&src, &sets, &cfg).unwrap().instance_ids(), vec![0, 1, 2]);
        // stage 2 merges them by track id
        let s2 = aggregate_stage2(&src, &sets, &cfg).unwrap();
        assert_eq!(s2.instance_ids(), vec![7]);
        assert_eq!(s2.len(), 12);
    }

    #[test]
    fn stage2_requires_track_ids() {
        let src = frames(&[0]);
        let sets = vec![MaskSet::new(0, vec![first_n_mask(20, 10, 4)])];
        assert!(matches!(
            aggregate_stage2(&src, &sets, &LiftConfig::default()),
            Err(Error::MissingTrackId { frame: 0 })
        ));
    }

    #[test]
    fn stage2_subsampling_by_position() {
        let idx: Vec<usize> = (0..5).collect();
        let src = frames(&idx);
        let sets: Vec<MaskSet> = idx
            .iter()
            .map(|&i| MaskSet::new(i, vec![first_n_mask(20, 10, 3).with_track_id(1)]))
            .collect();
        let cfg = LiftConfig { min_points: 0, frame_subsample: 2 };
        let inst = stage2_instances(&src, &sets, &cfg).unwrap();
        let frames_used: Vec<usize> = inst.iter().flat_map(|s| s.source_frames.clone()).collect();
        assert_eq!(frames_used, vec![0, 2, 4]);
    }

    #[test]
    fn stage2_on_keyframes_matches_stage1_up_to_relabel() {
        let src = frames(&[0, 10]);
        let cfg = LiftConfig { min_points: 3, ..Default::default() };
        let sets = vec![
            MaskSet::new(0, vec![first_n_mask(20, 10, 5), first_n_mask(20, 10, 2), first_n_mask(20, 10, 9)]),
            MaskSet::new(10, vec![first_n_mask(20, 10, 4)]),
        ];
        let s1 = aggregate_stage1(&src, &sets, &cfg).unwrap();
        let mut serial = 0;
        let relabeled: Vec<MaskSet> = sets
            .iter()
            .map(|s| {
                let masks = s.masks.iter().map(|m| {
                    serial += 1;
                    m.clone().with_track_id(100 + serial)
                }).collect();
                MaskSet::new(s.frame_index, masks)
            })
            .collect();
        let s2 = aggregate_stage2(&src, &relabeled, &cfg).unwrap();
        assert_eq!(s1.len(), s2.len());
        let mut map = HashMap::new();
        for (a, b) in s1.points.iter().zip(&s2.points) {
            assert_eq!(a.position(), b.position());
            assert_eq!(*map.entry(a.instance_id).or_insert(b.instance_id), b.instance_id);
        }
        assert_eq!(map.len(), 3);
    }
}
