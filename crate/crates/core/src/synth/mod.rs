//! Synthetic RGB-D scenes: analytic box and sphere worlds rendered along a
//! camera trajectory, with simulated part/whole fragmentation of detections
//! and an oracle propagator backed by ground truth.

mod fragment;
mod oracle;
mod render;
pub mod scenarios;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_io::{CameraIntrinsics, Pose4x4};

pub use fragment::{fragment_masks, simulate_detections, split_mask};
pub use oracle::OraclePropagator;
pub use render::{
    render_scene, surface_distance, write_scene, RenderedScene, GT_MASK_DIR, GT_POINTS_FILE, NO_OBJECT,
    SPEC_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Box,
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthObject {
    pub shape: Shape,
    pub center: [f64; 3],
    /// Full extents along x, y, z. A sphere's diameter is `size[0]` and all
    /// three entries must agree.
    pub size: [f64; 3],
    pub instance_id: u32,
}

impl SynthObject {
    pub fn aabb(&self) -> ([f64; 3], [f64; 3]) {
        let h = [self.size[0] / 2.0, self.size[1] / 2.0, self.size[2] / 2.0];
        (
            [self.center[0] - h[0], self.center[1] - h[1], self.center[2] - h[2]],
            [self.center[0] + h[0], self.center[1] + h[1], self.center[2] + h[2]],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSpec {
    pub width: u32,
    pub height: u32,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fragmentation {
    /// Chance that a visible object is detected only as parts.
    pub probability: f64,
    pub parts: u32,
}

impl Default for Fragmentation {
    fn default() -> Self {
        Fragmentation {
            probability: 0.0,
            parts: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionEvent {
    pub instance_id: u32,
    /// Inclusive frame range during which the object is not rendered.
    pub hidden_frames: [usize; 2],
}

fn default_scene_id() -> String {
    "synth".into()
}

fn default_depth_scale() -> f64 {
    0.001
}

fn default_spacing() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_scene_id")]
    pub scene_id: String,
    pub seed: u64,
    pub image: ImageSpec,
    pub objects: Vec<SynthObject>,
    /// Camera-to-world pose per frame.
    pub trajectory: Vec<Pose4x4>,
    #[serde(default)]
    pub fragmentation: Fragmentation,
    #[serde(default)]
    pub occlusion_events: Vec<OcclusionEvent>,
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    /// Sample spacing of the ground-truth surface cloud in meters.
    #[serde(default = "default_spacing")]
    pub surface_spacing: f64,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::SpecInvalid(msg.into())
}

impl SynthSpec {
    pub fn frame_count(&self) -> usize {
        self.trajectory.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.width == 0 || self.image.height == 0 {
            return Err(invalid("image width and height must be > 0"));
        }
        self.image.intrinsics.validate().map_err(|e| invalid(e.to_string()))?;
        if self.trajectory.is_empty() {
            return Err(invalid("trajectory has no frames"));
        }
        for (i, p) in self.trajectory.iter().enumerate() {
            p.validate().map_err(|e| invalid(format!("trajectory[{i}]: {e}")))?;
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return Err(invalid("depth_scale must be > 0"));
        }
        if !(self.surface_spacing > 0.0 && self.surface_spacing.is_finite()) {
            return Err(invalid("surface_spacing must be > 0"));
        }
        let f = &self.fragmentation;
        if !(0.0..=1.0).contains(&f.probability) {
            return Err(invalid(format!("fragmentation probability {} outside [0, 1]", f.probability)));
        }
        if !(2..=4).contains(&f.parts) {
            return Err(invalid(format!("fragmentation parts {} outside 2..=4", f.parts)));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.instance_id == NO_OBJECT {
                return Err(invalid(format!("objects[{i}]: instance id {NO_OBJECT} is reserved")));
            }
            if !o.center.iter().all(|c| c.is_finite()) || !o.size.iter().all(|s| *s > 0.0 && s.is_finite()) {
                return Err(invalid(format!("objects[{i}]: center must be finite and size > 0")));
            }
            if o.shape == Shape::Sphere && (o.size[1] != o.size[0] || o.size[2] != o.size[0]) {
                return Err(invalid(format!("objects[{i}]: sphere size must be equal on all axes")));
            }
            for (j, other) in self.objects[..i].iter().enumerate() {
                if other.instance_id == o.instance_id {
                    return Err(invalid(format!("objects[{i}]: duplicate instance id {}", o.instance_id)));
                }
                let (a0, a1) = o.aabb();
                let (b0, b1) = other.aabb();
                if (0..3).all(|k| a0[k] < b1[k] && b0[k] < a1[k]) {
                    return Err(invalid(format!("objects[{i}] and objects[{j}] overlap")));
                }
            }
        }
        for (i, e) in self.occlusion_events.iter().enumerate() {
            if !self.objects.iter().any(|o| o.instance_id == e.instance_id) {
                return Err(invalid(format!("occlusion_events[{i}]: unknown instance {}", e.instance_id)));
            }
            if e.hidden_frames[0] > e.hidden_frames[1] {
                return Err(invalid(format!("occlusion_events[{i}]: empty frame range")));
            }
        }
        Ok(())
    }

    pub fn is_hidden(&self, instance_id: u32, frame: usize) -> bool {
        self.occlusion_events
            .iter()
            .any(|e| e.instance_id == instance_id && (e.hidden_frames[0]..=e.hidden_frames[1]).contains(&frame))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let spec: SynthSpec = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::schema(e.path().to_string(), e.into_inner().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_canonical_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spec serializes");
        s.push('\n');
        s
    }
}

/// Independent RNG seed for one `(frame, object)` stream of a master seed.
pub fn stream_seed(seed: u64, frame: usize, object: u32) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ frame as u64).wrapping_add(object as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        scenarios::single_box_spec()
    }

    #[test]
    fn validation() {
        spec().validate().unwrap();
        let mut s = spec();
        s.objects.push(SynthObject { instance_id: 9, ..s.objects[0].clone() });
        assert!(matches!(s.validate(), Err(Error::SpecInvalid(m)) if m.contains("overlap")));
        let mut s = spec();
        s.fragmentation.parts = 5;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.trajectory.clear();
        assert!(s.validate().is_err());
        let mut s = spec();
        s.objects[0].shape = Shape::Sphere;
        s.objects[0].size = [1.0, 1.0, 2.0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = spec();
        let back: SynthSpec = serde_json::from_str(&s.to_canonical_string()).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<SynthSpec>("{}").is_err());
    }

    #[test]
    fn streams_differ() {
        assert_ne!(stream_seed(1, 0, 0), stream_seed(1, 0, 1));
        assert_ne!(stream_seed(1, 0, 1), stream_seed(1, 1, 0));
        assert_eq!(stream_seed(7, 3, 2), stream_seed(7, 3, 2));
    }
}
