use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::fragment::simulate_detections;
use super::{Shape, SynthObject, SynthSpec};
use crate::error::{Error, Result};
use crate::maskproc::MaskSet;
use crate::scene_io::{
    encode_rle, save_manifest, write_mask_file, Bitmap, DepthMap, FrameEntry, LabeledPoint,
    LabeledPointSet, SceneManifest, MANIFEST_FILE,
};

/// Id-buffer value for pixels that see no object.
pub const NO_OBJECT: u32 = u32::MAX;
pub const GT_MASK_DIR: &str = "gt/masks";
pub const GT_POINTS_FILE: &str = "gt/points.glpt";
pub const SPEC_FILE: &str = "synth.json";

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub spec: SynthSpec,
    pub manifest: SceneManifest,
    pub depth: Vec<DepthMap>,
    /// Per-frame, row-major instance id of the nearest surface.
    pub ids: Vec<Vec<u32>>,
    /// Per-frame ground-truth masks; `track_id` holds the instance id.
    pub gt_masks: Vec<MaskSet>,
    /// Per-frame simulated detector output, before redundancy filtering.
    pub detections: Vec<MaskSet>,
    pub gt_points: LabeledPointSet,
}

fn intersect(o: &SynthObject, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
    match o.shape {
        Shape::Box => {
            let (lo, hi) = o.aabb();
            let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
            for k in 0..3 {
                if dir[k] == 0.0 {
                    if origin[k] < lo[k] || origin[k] > hi[k] {
                        return None;
                    }
                } else {
                    let t1 = (lo[k] - origin[k]) / dir[k];
                    let t2 = (hi[k] - origin[k]) / dir[k];
                    tmin = tmin.max(t1.min(t2));
                    tmax = tmax.min(t1.max(t2));
                }
            }
            if tmax < tmin || tmax <= 0.0 {
                None
            } else if tmin > 0.0 {
                Some(tmin)
            } else {
                Some(tmax)
            }
        }
        Shape::Sphere => {
            let r = o.size[0] / 2.0;
            let oc = [origin[0] - o.center[0], origin[1] - o.center[1], origin[2] - o.center[2]];
            let a = dot(dir, dir);
            let b = dot(oc, dir);
            let c = dot(oc, oc) - r * r;
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t1 = (-b - sq) / a;
            let t2 = (-b + sq) / a;
            if t1 > 0.0 {
                Some(t1)
            } else if t2 > 0.0 {
                Some(t2)
            } else {
                None
            }
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Unsigned distance from `p` to the object's surface.
pub fn surface_distance(o: &SynthObject, p: [f64; 3]) -> f64 {
    let d = [p[0] - o.center[0], p[1] - o.center[1], p[2] - o.center[2]];
    match o.shape {
        Shape::Box => {
            let q: Vec<f64> = (0..3).map(|k| d[k].abs() - o.size[k] / 2.0).collect();
            let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
            let inside = q[0].max(q[1]).max(q[2]).min(0.0);
            (outside + inside).abs()
        }
        Shape::Sphere => (dot(d, d).sqrt() - o.size[0] / 2.0).abs(),
    }
}

/// Ray casts one frame. The ray through integer pixel `(u, v)` has camera
/// direction `((u - cx) / fx, (v - cy) / fy, 1)`, so its parameter at a hit
/// is the camera-space depth.
fn render_frame(spec: &SynthSpec, frame: usize) -> (Vec<u16>, Vec<u32>) {
    let (w, h) = (spec.image.width as usize, spec.image.height as usize);
    let k = &spec.image.intrinsics;
    let pose = &spec.trajectory[frame];
    let origin = pose.translation_part();
    let visible: Vec<&SynthObject> = spec
        .objects
        .iter()
        .filter(|o| !spec.is_hidden(o.instance_id, frame))
        .collect();
    let mut depth = vec![0u16; w * h];
    let mut ids = vec![NO_OBJECT; w * h];
    for v in 0..h {
        for u in 0..w {
            let dc = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
            let dw = pose.rotate(dc);
            let mut best: Option<(f64, u32)> = None;
            for o in &visible {
                if let Some(t) = intersect(o, origin, dw) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, o.instance_id));
                    }
                }
            }
            if let Some((t, id)) = best {
                let raw = (t / spec.depth_scale).round();
                if (1.0..=u16::MAX as f64).contains(&raw) {
                    depth[v * w + u] = raw as u16;
                    ids[v * w + u] = id;
                }
            }
        }
    }
    (depth, ids)
}

fn gt_masks_from_ids(spec: &SynthSpec, frame: usize, ids: &[u32]) -> MaskSet {
    let (w, h) = (spec.image.width, spec.image.height);
    let mut order: Vec<u32> = spec.objects.iter().map(|o| o.instance_id).collect();
    order.sort_unstable();
    let masks = order
        .into_iter()
        .filter_map(|id| {
            let data: Vec<bool> = ids.iter().map(|&i| i == id).collect();
            let bitmap = Bitmap::from_data(w, h, data).ok()?;
            encode_rle(&bitmap).ok().map(|m| m.with_track_id(id))
        })
        .collect();
    MaskSet::new(frame, masks)
}

fn sample_surface(o: &SynthObject, spacing: f64) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    match o.shape {
        Shape::Box => {
            let (lo, hi) = o.aabb();
            for axis in 0..3 {
                let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
                let nb = (o.size[b] / spacing).ceil().max(1.0) as usize;
                let nc = (o.size[c] / spacing).ceil().max(1.0) as usize;
                for face in [lo[axis], hi[axis]] {
                    for i in 0..nb {
                        for j in 0..nc {
                            let mut p = [0.0; 3];
                            p[axis] = face;
                            p[b] = lo[b] + (i as f64 + 0.5) * o.size[b] / nb as f64;
                            p[c] = lo[c] + (j as f64 + 0.5) * o.size[c] / nc as f64;
                            out.push(p);
                        }
                    }
                }
            }
        }
        Shape::Sphere => {
            let r = o.size[0] / 2.0;
            let n = (4.0 * std::f64::consts::PI * r * r / (spacing * spacing)).ceil().max(1.0) as usize;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            for i in 0..n {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let rr = (1.0 - z * z).sqrt();
                let phi = i as f64 * golden;
                out.push([
                    o.center[0] + r * rr * phi.cos(),
                    o.center[1] + r * rr * phi.sin(),
                    o.center[2] + r * z,
                ]);
            }
        }
    }
    out
}

/// Analytic surface samples that some frame actually observes: the sample
/// projects onto a pixel owned by its object whose depth agrees within one
/// sample spacing.
fn gt_cloud(spec: &SynthSpec, depth: &[Vec<u16>], ids: &[Vec<u32>]) -> LabeledPointSet {
    let k = &spec.image.intrinsics;
    let (w, h) = (spec.image.width as i64, spec.image.height as i64);
    let world_to_cam: Vec<_> = spec.trajectory.iter().map(|p| p.inverse_rigid()).collect();
    let tol = spec.surface_spacing + spec.depth_scale;
    let mut objects: Vec<&SynthObject> = spec.objects.iter().collect();
    objects.sort_by_key(|o| o.instance_id);
    let points = objects
        .into_iter()
        .flat_map(|o| {
            let samples = sample_surface(o, spec.surface_spacing);
            samples
                .into_par_iter()
                .filter(|&p| {
                    world_to_cam.iter().enumerate().any(|(f, cam)| {
                        let pc = cam.transform_point(p);
                        if pc[2] <= 0.0 {
                            return false;
                        }
                        let u = (k.fx * pc[0] / pc[2] + k.cx).round() as i64;
                        let v = (k.fy * pc[1] / pc[2] + k.cy).round() as i64;
                        if u < 0 || v < 0 || u >= w || v >= h {
                            return false;
                        }
                        let idx = (v * w + u) as usize;
                        ids[f][idx] == o.instance_id
                            && (depth[f][idx] as f64 * spec.depth_scale - pc[2]).abs() <= tol
                    })
                })
                .map(|p| LabeledPoint {
                    x: p[0],
                    y: p[1],
                    z: p[2],
                    instance_id: o.instance_id,
                    confidence: 1.0,
                })
                .collect::<Vec<_>>()
        })
        .collect();
    LabeledPointSet::new(points)
}

pub fn frame_file(frame: usize, ext: &str) -> String {
    format!("frame_{frame:06}.{ext}")
}

/// Renders depth, ground-truth masks, simulated detections and the
/// ground-truth cloud. Frame indices are trajectory positions.
pub fn render_scene(spec: &SynthSpec) -> Result<RenderedScene> {
    spec.validate()?;
    let n = spec.frame_count();
    let (depth_raw, ids): (Vec<Vec<u16>>, Vec<Vec<u32>>) =
        (0..n).into_par_iter().map(|f| render_frame(spec, f)).unzip();
    let gt_masks: Vec<MaskSet> = (0..n).into_par_iter().map(|f| gt_masks_from_ids(spec, f, &ids[f])).collect();
    let detections = gt_masks
        .par_iter()
        .map(|gt| MaskSet::new(gt.frame_index, simulate_detections(gt, &spec.fragmentation, spec.seed)))
        .collect();
    let gt_points = gt_cloud(spec, &depth_raw, &ids);
    let (w, h) = (spec.image.width, spec.image.height);
    let depth = depth_raw
        .into_iter()
        .map(|d| DepthMap::new(w, h, d, spec.depth_scale))
        .collect::<Result<Vec<_>>>()?;
    let manifest = SceneManifest {
        scene_id: spec.scene_id.clone(),
        width: w,
        height: h,
        depth_scale: spec.depth_scale,
        intrinsics: spec.image.intrinsics,
        frames: spec
            .trajectory
            .iter()
            .enumerate()
            .map(|(i, pose)| FrameEntry {
                frame_index: i,
                depth_path: format!("depth/{}", frame_file(i, "u16")),
                extrinsics: *pose,
                mask_path: Some(format!("masks/{}", frame_file(i, "json"))),
            })
            .collect(),
    };
    manifest.validate()?;
    Ok(RenderedScene {
        spec: spec.clone(),
        manifest,
        depth,
        ids,
        gt_masks,
        detections,
        gt_points,
    })
}

/// Writes a rendered scene:
///
/// ```text
/// manifest.json  synth.json
/// depth/frame_NNNNNN.u16      masks/frame_NNNNNN.json
/// gt/masks/frame_NNNNNN.json  gt/points.glpt
/// ```
pub fn write_scene(scene: &RenderedScene, dir: &Path) -> Result<()> {
    for sub in ["depth", "masks", GT_MASK_DIR] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (i, frame) in scene.manifest.frames.iter().enumerate() {
        scene.depth[i].write(&dir.join(&frame.depth_path))?;
        if let Some(mp) = &frame.mask_path {
            write_mask_file(&dir.join(mp), &scene.detections[i].masks)?;
        }
        let gt = dir.join(GT_MASK_DIR).join(frame_file(frame.frame_index, "json"));
        write_mask_file(&gt, &scene.gt_masks[i].masks)?;
    }
    let gt_path = dir.join(GT_POINTS_FILE);
    fs::write(&gt_path, scene.gt_points.to_binary()).map_err(|e| Error::io(&gt_path, e))?;
    let spec_path = dir.join(SPEC_FILE);
    fs::write(&spec_path, scene.spec.to_canonical_string()).map_err(|e| Error::io(&spec_path, e))?;
    save_manifest(&scene.manifest, &dir.join(MANIFEST_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lift::{lift_mask, CameraFrame, LiftConfig};
    use crate::synth::scenarios;

    #[test]
    fn unit_box_front_face() {
        // 1 m box at the origin, camera 3 m back on -Z looking along +Z.
        let spec = scenarios::single_box_spec();
        let r = render_scene(&spec).unwrap();
        let k = spec.image.intrinsics;
        let ids = &r.ids[0];
        let w = spec.image.width as usize;
        // face z = -0.5 at depth 2.5; its edges at x = +-0.5 project to
        // u = cx +- fx * 0.5 / 2.5
        let half = k.fx * 0.5 / 2.5;
        for v in 0..spec.image.height as usize {
            for u in 0..w {
                let (du, dv) = ((u as f64 - k.cx).abs(), (v as f64 - k.cy).abs());
                let inside = du < half - 1e-9 && dv < half - 1e-9;
                let outside = du > half + 1e-9 || dv > half + 1e-9;
                if inside {
                    assert_eq!(ids[v * w + u], 1);
                    assert_eq!(r.depth[0].raw(u as u32, v as u32), 2500);
                }
                if outside {
                    assert_eq!(ids[v * w + u], NO_OBJECT);
                }
            }
        }
        // corner of the visible square
        let u = (k.cx - half).ceil() as u32;
        let v = (k.cy - half).ceil() as u32;
        assert_eq!(r.depth[0].meters(u, v), Some(2.5));
        assert_eq!(r.gt_masks[0].len(), 1);
    }

    #[test]
    fn empty_world() {
        let mut spec = scenarios::single_box_spec();
        spec.objects.clear();
        let r = render_scene(&spec).unwrap();
        assert!(r.depth.iter().all(|d| d.values.iter().all(|&v| v == 0)));
        assert!(r.gt_masks.iter().all(|m| m.is_empty()));
        assert!(r.gt_points.is_empty());
    }

    #[test]
    fn occlusion_hides_exactly() {
        let mut spec = scenarios::single_box_spec();
        spec.trajectory = vec![spec.trajectory[0]; 40];
        spec.occlusion_events.push(super::super::OcclusionEvent { instance_id: 1, hidden_frames: [20, 29] });
        let r = render_scene(&spec).unwrap();
        for (f, set) in r.gt_masks.iter().enumerate() {
            assert_eq!(set.is_empty(), (20..=29).contains(&f), "frame {f}");
        }
    }

    #[test]
    fn lifted_gt_lies_on_surface() {
        let spec = scenarios::geometry_spec(3);
        let r = render_scene(&spec).unwrap();
        for (f, set) in r.gt_masks.iter().enumerate() {
            let frame = CameraFrame {
                frame_index: f,
                intrinsics: spec.image.intrinsics,
                extrinsics: spec.trajectory[f],
                depth: r.depth[f].clone(),
            };
            for m in &set.masks {
                let obj = spec.objects.iter().find(|o| Some(o.instance_id) == m.track_id).unwrap();
                let lifted = lift_mask(m, &frame, &LiftConfig { min_points: 0, frame_subsample: 1 }).unwrap().unwrap();
                for p in lifted.points {
                    assert!(surface_distance(obj, p) <= 1e-6, "{}", surface_distance(obj, p));
                }
            }
        }
    }

    #[test]
    fn sphere_distance() {
        let s = SynthObject { shape: Shape::Sphere, center: [1.0, 0.0, 0.0], size: [2.0; 3], instance_id: 0 };
        assert!((surface_distance(&s, [3.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((surface_distance(&s, [1.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        let hit = intersect(&s, [1.0, 0.0, -5.0], [0.0, 0.0, 1.0]).unwrap();
        assert!((hit - 4.0).abs() < 1e-12);
    }
}
