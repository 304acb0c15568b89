use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::camera::{CameraIntrinsics, Pose4x4};
use super::depth::DepthMap;
use super::mask::Mask;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

fn default_depth_scale() -> f64 {
    0.001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub frame_index: usize,
    pub depth_path: String,
    /// Camera-to-world pose.
    pub extrinsics: Pose4x4,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub scene_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<FrameEntry>,
}

impl SceneManifest {
    /// Checks every invariant that does not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::schema("width", "must be > 0"));
        }
        if self.height == 0 {
            return Err(Error::schema("height", "must be > 0"));
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return Err(Error::schema("depth_scale", "must be > 0"));
        }
        self.intrinsics.validate()?;
        for (i, pair) in self.frames.windows(2).enumerate() {
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(Error::schema(
                    format!("frames[{}].frame_index", i + 1),
                    format!(
                        "frame indices must be strictly increasing ({} after {})",
                        pair[1].frame_index, pair[0].frame_index
                    ),
                ));
            }
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.extrinsics.validate().map_err(|e| {
                Error::InvariantViolation(format!("frames[{i}].extrinsics: {e}"))
            })?;
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Position of a frame index in `frames`.
    pub fn position(&self, frame_index: usize) -> Option<usize> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.frame_index)
            .ok()
    }

    pub fn to_canonical_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn load_manifest(path: &Path) -> Result<SceneManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let manifest: SceneManifest = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::schema(field, e.into_inner().to_string())
    })?;
    manifest.validate()?;
    let root = path.parent().unwrap_or(Path::new("."));
    for f in &manifest.frames {
        let depth = root.join(&f.depth_path);
        if !depth.is_file() {
            return Err(Error::MissingFile(depth));
        }
        if let Some(m) = &f.mask_path {
            let mp = root.join(m);
            if !mp.is_file() {
                return Err(Error::MissingFile(mp));
            }
        }
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &SceneManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    fs::write(path, manifest.to_canonical_string()).map_err(|e| Error::io(path, e))
}

/// A manifest together with the directory its relative paths resolve from.
#[derive(Debug, Clone)]
pub struct Scene {
    pub root: PathBuf,
    pub manifest: SceneManifest,
}

impl Scene {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = load_manifest(&dir.join(MANIFEST_FILE))?;
        Ok(Scene {
            root: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.manifest.width, self.manifest.height)
    }

    /// Depth raster of the frame at position `pos` in the manifest.
    pub fn depth(&self, pos: usize) -> Result<DepthMap> {
        let m = &self.manifest;
        DepthMap::read(
            &self.resolve(&m.frames[pos].depth_path),
            m.width,
            m.height,
            m.depth_scale,
        )
    }

    pub fn camera_frame(&self, pos: usize) -> Result<crate::lift::CameraFrame> {
        Ok(crate::lift::CameraFrame {
            frame_index: self.manifest.frames[pos].frame_index,
            intrinsics: self.manifest.intrinsics,
            extrinsics: self.manifest.frames[pos].extrinsics,
            depth: self.depth(pos)?,
        })
    }
}

/// Reads a per-frame mask file and checks every record against the raster
/// size. Stored masks must be non-empty.
pub fn read_mask_file(path: &Path, dims: (u32, u32)) -> Result<Vec<Mask>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let masks: Vec<Mask> = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = format!("{}: {}", path.display(), e.path());
        Error::schema(field, e.into_inner().to_string())
    })?;
    for m in &masks {
        if m.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: m.dims(),
            });
        }
        if m.is_empty() {
            return Err(Error::EmptyMask);
        }
    }
    Ok(masks)
}

/// Writes masks as a JSON array with one compact record per line.
pub fn write_mask_file(path: &Path, masks: &[Mask]) -> Result<()> {
    let mut out = String::from("[");
    for (i, m) in masks.iter().enumerate() {
        out.push_str(if i == 0 { "\n  " } else { ",\n  " });
        out.push_str(&serde_json::to_string(m).expect("mask serializes"));
    }
    out.push_str(if masks.is_empty() { "]\n" } else { "\n]\n" });
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
