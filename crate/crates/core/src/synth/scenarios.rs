//! Ready-made scene specs: single-object fixtures, micro-scale geometry
//! scenes, scripted occlusion cases and orbit scenes for ablations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Fragmentation, ImageSpec, OcclusionEvent, Shape, SynthObject, SynthSpec};
use crate::scene_io::{CameraIntrinsics, Pose4x4};

/// Camera orbit around `target` at fixed radius and height, sweeping
/// `sweep_deg` degrees over `frames` poses.
pub fn orbit(frames: usize, target: [f64; 3], radius: f64, height: f64, start_deg: f64, sweep_deg: f64) -> Vec<Pose4x4> {
    (0..frames)
        .map(|i| {
            let t = if frames > 1 { i as f64 / (frames - 1) as f64 } else { 0.0 };
            let a = (start_deg + sweep_deg * t).to_radians();
            let eye = [target[0] + radius * a.cos(), target[1] + radius * a.sin(), target[2] + height];
            Pose4x4::look_at(eye, target, [0.0, 0.0, 1.0])
        })
        .collect()
}

fn image(width: u32, height: u32, f: f64) -> ImageSpec {
    ImageSpec {
        width,
        height,
        intrinsics: CameraIntrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        },
    }
}

fn shape_for(i: usize) -> Shape {
    if i % 3 == 2 {
        Shape::Sphere
    } else {
        Shape::Box
    }
}

fn object(shape: Shape, center: [f64; 3], size: [f64; 3], id: u32) -> SynthObject {
    let size = if shape == Shape::Sphere { [size[0]; 3] } else { size };
    SynthObject { shape, center, size, instance_id: id }
}

/// One 1 m box at the origin seen from 3 m along -Z, one frame, 64x64.
pub fn single_box_spec() -> SynthSpec {
    SynthSpec {
        scene_id: "single-box".into(),
        seed: 0,
        image: ImageSpec {
            width: 64,
            height: 64,
            intrinsics: CameraIntrinsics { fx: 64.0, fy: 64.0, cx: 32.0, cy: 32.0 },
        },
        objects: vec![object(Shape::Box, [0.0; 3], [1.0; 3], 1)],
        trajectory: vec![Pose4x4::translation([0.0, 0.0, -3.0])],
        fragmentation: Fragmentation::default(),
        occlusion_events: vec![],
        depth_scale: 0.001,
        surface_spacing: 0.01,
    }
}

/// Centimetre-scale scene with micrometre depth quantization: a few boxes
/// and spheres within 12 mm of the origin, four views from 35 mm away.
pub fn geometry_spec(i: u64) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(i ^ 0x9e01);
    let mut objects: Vec<SynthObject> = Vec::new();
    let count = 2 + (i % 3) as usize;
    while objects.len() < count {
        let n = objects.len();
        let size = [rng.gen_range(0.004..0.008), rng.gen_range(0.004..0.008), rng.gen_range(0.004..0.008)];
        let center = [rng.gen_range(-0.012..0.012), rng.gen_range(-0.012..0.012), rng.gen_range(-0.004..0.004)];
        let o = object(shape_for(n + i as usize), center, size, n as u32 + 1);
        let (a0, a1) = o.aabb();
        let clear = objects.iter().all(|p| {
            let (b0, b1) = p.aabb();
            !(0..3).all(|k| a0[k] < b1[k] && b0[k] < a1[k])
        });
        if clear {
            objects.push(o);
        }
    }
    let start = rng.gen_range(0.0..360.0);
    SynthSpec {
        scene_id: format!("geometry-{i:02}"),
        seed: i,
        image: image(64, 48, 60.0),
        objects,
        trajectory: orbit(4, [0.0; 3], 0.035, 0.01, start, 60.0),
        fragmentation: Fragmentation::default(),
        occlusion_events: vec![],
        depth_scale: 1e-6,
        surface_spacing: 0.0005,
    }
}

/// A scripted occlusion: `target` is missing at `hidden_keyframes`
/// consecutive keyframes and visible again from `reentry_frame`.
#[derive(Debug, Clone)]
pub struct OcclusionCase {
    pub spec: SynthSpec,
    pub stride: usize,
    pub target: u32,
    pub hidden_keyframes: usize,
    /// Last keyframe at which the target is visible before hiding.
    pub last_seen_frame: usize,
    /// First keyframe at which the target is visible again.
    pub reentry_frame: usize,
    /// Object that first appears at this keyframe, if any.
    pub newcomer: Option<(u32, usize)>,
}

/// Case `i` of the occlusion suite. Hidden lengths cycle through
/// `1..=tau_dorm + 2` keyframes; every third case adds a late newcomer.
pub fn occlusion_case(i: usize, stride: usize, tau_dorm: u32) -> OcclusionCase {
    let mut rng = ChaCha8Rng::seed_from_u64(i as u64 ^ 0x0cc1);
    let hidden = 1 + i % (tau_dorm as usize + 2);
    let n = 2 + i % 3;
    let with_newcomer = i % 3 == 0;
    let slots = n + with_newcomer as usize;
    let mut objects = Vec::new();
    for k in 0..slots {
        let x = (k as f64 - (slots as f64 - 1.0) / 2.0) * 0.6;
        let s = rng.gen_range(0.3..0.4);
        let shape = shape_for(k + i);
        let size = [s, rng.gen_range(0.3..0.4), rng.gen_range(0.3..0.45)];
        let size = if shape == Shape::Sphere { [s; 3] } else { size };
        objects.push(object(shape, [x, 0.0, size[2] / 2.0], size, k as u32 + 1));
    }
    let first_hidden_kf = 2;
    let reentry_kf = first_hidden_kf + hidden;
    let frames = (reentry_kf + 2) * stride + 1;
    let target = (i % n) as u32 + 1;
    let mut events = vec![OcclusionEvent {
        instance_id: target,
        hidden_frames: [first_hidden_kf * stride - 3, (reentry_kf - 1) * stride + 3],
    }];
    let mut newcomer = None;
    if with_newcomer {
        let id = slots as u32;
        events.push(OcclusionEvent { instance_id: id, hidden_frames: [0, stride + 4] });
        newcomer = Some((id, 2 * stride));
    }
    let sway = rng.gen_range(0.0..std::f64::consts::TAU);
    let trajectory = (0..frames)
        .map(|f| {
            let dx = 0.05 * (sway + f as f64 * 0.05).sin();
            Pose4x4::look_at([dx, -3.0, 1.2], [0.0, 0.0, 0.2], [0.0, 0.0, 1.0])
        })
        .collect();
    OcclusionCase {
        spec: SynthSpec {
            scene_id: format!("occlusion-{i:02}"),
            seed: i as u64,
            image: image(96, 72, 80.0),
            objects,
            trajectory,
            fragmentation: Fragmentation::default(),
            occlusion_events: events,
            depth_scale: 0.001,
            surface_spacing: 0.01,
        },
        stride,
        target,
        hidden_keyframes: hidden,
        last_seen_frame: (first_hidden_kf - 1) * stride,
        reentry_frame: reentry_kf * stride,
        newcomer,
    }
}

/// Objects spread on a ring around the origin.
fn ring_objects(rng: &mut ChaCha8Rng, count: usize, offset: usize) -> Vec<SynthObject> {
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    (0..count)
        .map(|k| {
            let a = phase + k as f64 * std::f64::consts::TAU / count as f64;
            let r = rng.gen_range(0.55..0.85);
            let shape = shape_for(k + offset);
            let size = [rng.gen_range(0.28..0.42), rng.gen_range(0.28..0.42), rng.gen_range(0.3..0.5)];
            let size = if shape == Shape::Sphere { [size[0]; 3] } else { size };
            object(shape, [r * a.cos(), r * a.sin(), size[2] / 2.0], size, k as u32 + 1)
        })
        .collect()
}

/// Orbit scene with five objects used by the stage comparisons. Detections
/// fragment with probability `fragmentation`.
pub fn ablation_spec(i: u64, fragmentation: f64) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(i ^ 0xab1a);
    let objects = ring_objects(&mut rng, 5, i as usize);
    let start = rng.gen_range(0.0..360.0);
    SynthSpec {
        scene_id: format!("ablation-{i:02}"),
        seed: 1000 + i,
        image: image(160, 120, 135.0),
        objects,
        trajectory: orbit(41, [0.0, 0.0, 0.2], 3.0, 1.6, start, 90.0),
        fragmentation: Fragmentation { probability: fragmentation, parts: 2 + (i % 3) as u32 },
        occlusion_events: vec![],
        depth_scale: 0.001,
        surface_spacing: 0.01,
    }
}

/// 200 frames, five objects, 320x240.
pub fn perf_spec() -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    SynthSpec {
        scene_id: "perf-200".into(),
        seed: 200,
        image: image(320, 240, 260.0),
        objects: ring_objects(&mut rng, 5, 0),
        trajectory: orbit(200, [0.0, 0.0, 0.2], 3.0, 1.6, 0.0, 180.0),
        fragmentation: Fragmentation { probability: 0.5, parts: 3 },
        occlusion_events: vec![],
        depth_scale: 0.001,
        surface_spacing: 0.01,
    }
}

/// Small demonstration world: three boxes and a sphere, one of the boxes
/// briefly hidden, half of all detections fragmented.
pub fn boxworld_spec() -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    SynthSpec {
        scene_id: "boxworld".into(),
        seed: 7,
        image: image(160, 120, 135.0),
        objects: ring_objects(&mut rng, 4, 0),
        trajectory: orbit(31, [0.0, 0.0, 0.2], 3.0, 1.6, 20.0, 60.0),
        fragmentation: Fragmentation { probability: 0.5, parts: 2 },
        occlusion_events: vec![OcclusionEvent { instance_id: 2, hidden_frames: [8, 12] }],
        depth_scale: 0.001,
        surface_spacing: 0.01,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builders_are_valid() {
        single_box_spec().validate().unwrap();
        boxworld_spec().validate().unwrap();
        perf_spec().validate().unwrap();
        for i in 0..20 {
            geometry_spec(i).validate().unwrap();
            ablation_spec(i, 0.5).validate().unwrap();
        }
        for i in 0..50 {
            let c = occlusion_case(i, 10, 3);
            c.spec.validate().unwrap();
            assert!((1..=5).contains(&c.hidden_keyframes));
        }
    }
}
