//! Voxel deduplication with majority-vote labels, confidence filtering, and
//! label transfer onto a full scene cloud.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_io::{LabeledPoint, LabeledPointSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Voxel edge length in meters.
    pub voxel_size: f64,
    pub tau_conf: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            voxel_size: 0.02,
            tau_conf: 0.5,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "voxel_size must be > 0, got {}",
                self.voxel_size
            )));
        }
        if !(0.0..=1.0).contains(&self.tau_conf) {
            return Err(Error::InvalidConfig(format!(
                "tau_conf must be in [0, 1], got {}",
                self.tau_conf
            )));
        }
        Ok(())
    }
}

pub type VoxelKey = [i64; 3];

pub fn voxel_key(p: [f64; 3], voxel: f64) -> VoxelKey {
    [
        (p[0] / voxel).floor() as i64,
        (p[1] / voxel).floor() as i64,
        (p[2] / voxel).floor() as i64,
    ]
}

fn point_order(a: &LabeledPoint, b: &LabeledPoint) -> Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
        .then(a.instance_id.cmp(&b.instance_id))
        .then(a.confidence.total_cmp(&b.confidence))
}

/// One point per occupied voxel, sorted by voxel key. The point sits at the
/// members' centroid and takes the most frequent instance id (ties to the
/// smallest id). Its confidence is the winning members' summed confidence
/// over the member count, which is the vote fraction when every input
/// confidence is 1.
pub fn voxelize_and_vote(points: &LabeledPointSet, cfg: &FusionConfig) -> Result<LabeledPointSet> {
    cfg.validate()?;
    Ok(LabeledPointSet::new(
        vote_voxels(points, cfg.voxel_size).into_iter().map(|(_, p)| p).collect(),
    ))
}

fn vote_voxels(points: &LabeledPointSet, voxel: f64) -> Vec<(VoxelKey, LabeledPoint)> {
    let mut keyed: Vec<(VoxelKey, LabeledPoint)> = points
        .points
        .par_iter()
        .map(|p| (voxel_key(p.position(), voxel), *p))
        .collect();
    // Members are summed in a fixed order so the result does not depend on
    // input order.
    keyed.par_sort_unstable_by(|a, b| a.0.cmp(&b.0).then_with(|| point_order(&a.1, &b.1)));

    let mut groups: Vec<&[(VoxelKey, LabeledPoint)]> = Vec::new();
    let mut start = 0;
    for i in 1..=keyed.len() {
        if i == keyed.len() || keyed[i].0 != keyed[start].0 {
            groups.push(&keyed[start..i]);
            start = i;
        }
    }
    groups.par_iter().map(|g| (g[0].0, vote_group(g))).collect()
}

fn vote_group(group: &[(VoxelKey, LabeledPoint)]) -> LabeledPoint {
    let n = group.len() as f64;
    let mut sum = [0.0f64; 3];
    // (id, count, confidence sum), sorted by id
    let mut tally: Vec<(u32, usize, f64)> = Vec::new();
    for (_, p) in group {
        sum[0] += p.x;
        sum[1] += p.y;
        sum[2] += p.z;
        match tally.binary_search_by_key(&p.instance_id, |t| t.0) {
            Ok(i) => {
                tally[i].1 += 1;
                tally[i].2 += p.confidence as f64;
            }
            Err(i) => tally.insert(i, (p.instance_id, 1, p.confidence as f64)),
        }
    }
    let mut best = tally[0];
    for &t in &tally[1..] {
        if t.1 > best.1 {
            best = t;
        }
    }
    LabeledPoint {
        x: sum[0] / n,
        y: sum[1] / n,
        z: sum[2] / n,
        instance_id: best.0,
        confidence: (best.2 / n) as f32,
    }
}

/// Keeps points whose confidence is strictly above `tau_conf`.
pub fn confidence_filter(points: &LabeledPointSet, tau_conf: f64) -> LabeledPointSet {
    LabeledPointSet::new(
        points
            .points
            .iter()
            .filter(|p| p.confidence as f64 > tau_conf)
            .copied()
            .collect(),
    )
}

/// Label for every full-cloud point, before confidence filtering. A point
/// takes the vote of its own voxel when that voxel is occupied; otherwise
/// the nearest voted centroid among the 26 neighbouring voxels, if one lies
/// within `voxel_size`. Distance ties go to the smaller voxel key.
pub fn transfer_labels(
    stage2_labels: &LabeledPointSet,
    full_cloud: &[[f64; 3]],
    cfg: &FusionConfig,
) -> Result<Vec<Option<(u32, f32)>>> {
    cfg.validate()?;
    if stage2_labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let voxel = cfg.voxel_size;
    let voted = vote_voxels(stage2_labels, voxel);
    let lookup: HashMap<VoxelKey, &LabeledPoint> = voted.iter().map(|(k, p)| (*k, p)).collect();
    Ok(full_cloud
        .par_iter()
        .map(|&q| {
            let key = voxel_key(q, voxel);
            if let Some(p) = lookup.get(&key) {
                return Some((p.instance_id, p.confidence));
            }
            let mut best: Option<(f64, VoxelKey, &LabeledPoint)> = None;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let k = [key[0] + dx, key[1] + dy, key[2] + dz];
                        let Some(p) = lookup.get(&k) else { continue };
                        let d2 = (p.x - q[0]).powi(2) + (p.y - q[1]).powi(2) + (p.z - q[2]).powi(2);
                        if d2 > voxel * voxel {
                            continue;
                        }
                        if best.is_none_or(|(bd, bk, _)| d2 < bd || (d2 == bd && k < bk)) {
                            best = Some((d2, k, p));
                        }
                    }
                }
            }
            best.map(|(_, _, p)| (p.instance_id, p.confidence))
        })
        .collect())
}

/// Transfers voxel-voted labels onto `full_cloud` and drops unlabeled and
/// low-confidence points. Output follows `full_cloud` order.
pub fn fuse_scene(
    stage2_labels: &LabeledPointSet,
    full_cloud: &[[f64; 3]],
    cfg: &FusionConfig,
) -> Result<LabeledPointSet> {
    let labels = transfer_labels(stage2_labels, full_cloud, cfg)?;
    let labeled = full_cloud
        .iter()
        .zip(labels)
        .filter_map(|(q, l)| {
            l.map(|(id, c)| LabeledPoint {
                x: q[0],
                y: q[1],
                z: q[2],
                instance_id: id,
                confidence: c,
            })
        })
        .collect();
    Ok(confidence_filter(&LabeledPointSet::new(labeled), cfg.tau_conf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lp(x: f64, y: f64, z: f64, id: u32) -> LabeledPoint {
        LabeledPoint { x, y, z, instance_id: id, confidence: 1.0 }
    }

    fn cfg(v: f64) -> FusionConfig {
        FusionConfig { voxel_size: v, tau_conf: 0.5 }
    }

    #[test]
    fn vote_examples() {
        let pts = LabeledPointSet::new(vec![lp(0.1, 0.1, 0.1, 5), lp(0.2, 0.2, 0.2, 5), lp(0.3, 0.3, 0.3, 7)]);
        let out = voxelize_and_vote(&pts, &cfg(1.0)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.points[0].instance_id, 5);
        assert!((out.points[0].confidence - 2.0 / 3.0).abs() < 1e-7);
        assert!((out.points[0].x - 0.2).abs() < 1e-15);

        let tie = LabeledPointSet::new(vec![lp(0.5, 0.5, 0.5, 7), lp(0.5, 0.5, 0.5, 5)]);
        let out = voxelize_and_vote(&tie, &cfg(1.0)).unwrap();
        assert_eq!((out.points[0].instance_id, out.points[0].confidence), (5, 0.5));
    }

    #[test]
    fn negative_coordinates_floor() {
        let pts = LabeledPointSet::new(vec![lp(-0.01, 0.0, 0.0, 1), lp(0.01, 0.0, 0.0, 2)]);
        assert_eq!(voxelize_and_vote(&pts, &cfg(1.0)).unwrap().len(), 2);
    }

    #[test]
    fn filter_examples() {
        let mk = |c: f32| LabeledPoint { confidence: c, ..lp(0.0, 0.0, 0.0, 0) };
        let set = LabeledPointSet::new(vec![mk(0.3), mk(0.6), mk(0.9)]);
        assert_eq!(confidence_filter(&set, 0.5).len(), 2);
        assert_eq!(confidence_filter(&LabeledPointSet::new(vec![mk(0.5)]), 0.5).len(), 0);
        let with_zero = LabeledPointSet::new(vec![mk(0.0), mk(0.1)]);
        assert_eq!(confidence_filter(&with_zero, 0.0).len(), 1);
    }

    #[test]
    fn fuse_identity_and_distance() {
        let pts = LabeledPointSet::new(vec![lp(0.005, 0.005, 0.005, 3), lp(0.105, 0.005, 0.005, 4)]);
        let full: Vec<[f64; 3]> = pts.points.iter().map(|p| p.position()).collect();
        let out = fuse_scene(&pts, &full, &cfg(0.02)).unwrap();
        assert_eq!(out, pts);

        // adjacent voxel within reach, and one far away
        let far = vec![[0.025, 0.005, 0.005], [0.5, 0.5, 0.5]];
        let labels = transfer_labels(&pts, &far, &cfg(0.02)).unwrap();
        assert_eq!(labels, vec![Some((3, 1.0)), None]);

        assert!(matches!(
            fuse_scene(&LabeledPointSet::default(), &full, &cfg(0.02)),
            Err(Error::EmptyLabels)
        ));
    }

    /// Independent oracle: quadratic grouping by truncated-down coordinates
    /// with a plain count per id.
    fn oracle(points: &[LabeledPoint], v: f64) -> Vec<(VoxelKey, u32, f64, usize)> {
        let mut keys: Vec<VoxelKey> = Vec::new();
        for p in points {
            let k = [(p.x / v).floor() as i64, (p.y / v).floor() as i64, (p.z / v).floor() as i64];
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.sort();
        keys.into_iter()
            .map(|k| {
                let members: Vec<&LabeledPoint> = points
                    .iter()
                    .filter(|p| [(p.x / v).floor() as i64, (p.y / v).floor() as i64, (p.z / v).floor() as i64] == k)
                    .collect();
                let mut best = (u32::MAX, 0usize);
                for m in &members {
                    let c = members.iter().filter(|o| o.instance_id == m.instance_id).count();
                    if c > best.1 || (c == best.1 && m.instance_id < best.0) {
                        best = (m.instance_id, c);
                    }
                }
                (k, best.0, best.1 as f64 / members.len() as f64, members.len())
            })
            .collect()
    }

    fn arb_points() -> impl Strategy<Value = Vec<LabeledPoint>> {
        proptest::collection::vec(
            (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0u32..4).prop_map(|(x, y, z, id)| lp(x, y, z, id)),
            1..200,
        )
    }

    proptest! {
        #[test]
        fn matches_oracle(points in arb_points(), v in prop_oneof![Just(0.1), Just(0.25), Just(0.5)]) {
            let got = voxelize_and_vote(&LabeledPointSet::new(points.clone()), &cfg(v)).unwrap();
            let want = oracle(&points, v);
            prop_assert_eq!(got.len(), want.len());
            for (g, w) in got.points.iter().zip(&want) {
                prop_assert_eq!(voxel_key(g.position(), v), w.0);
                prop_assert_eq!(g.instance_id, w.1);
                prop_assert!((g.confidence as f64 - w.2).abs() < 1e-6);
            }
        }

        #[test]
        fn permutation_invariant(points in arb_points(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = points.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = voxelize_and_vote(&LabeledPointSet::new(points), &cfg(0.3)).unwrap();
            let b = voxelize_and_vote(&LabeledPointSet::new(shuffled), &cfg(0.3)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn filter_idempotent(confs in proptest::collection::vec(0.0f32..=1.0, 0..50), tau in 0.0f64..1.0) {
            let set = LabeledPointSet::new(confs.iter().map(|&c| LabeledPoint { confidence: c, ..lp(0.0, 0.0, 0.0, 0) }).collect());
            let once = confidence_filter(&set, tau);
            prop_assert_eq!(confidence_filter(&once, tau), once);
        }
    }
}
