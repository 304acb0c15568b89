use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::state::TrackerState;
use crate::error::{Error, Result};
use crate::maskproc::MaskSet;
use crate::scene_io::{read_mask_file, write_mask_file, Mask, MaskSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub track_id: u32,
    pub keyframe: usize,
    pub mask: Mask,
}

/// Ordered record of every prompt handed to the propagator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptLedger {
    pub entries: Vec<Prompt>,
}

impl PromptLedger {
    /// Adds one prompt per Active track, using its last keyframe mask.
    pub fn add_prompts(&mut self, state: &TrackerState, keyframe: usize) {
        for t in state.active() {
            self.entries.push(Prompt {
                track_id: t.track_id,
                keyframe,
                mask: t.last_keyframe_mask.clone(),
            });
        }
    }

    pub fn at_keyframe(&self, keyframe: usize) -> Vec<Prompt> {
        self.entries.iter().filter(|p| p.keyframe == keyframe).cloned().collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.entries {
            out.push_str(&serde_json::to_string(p).expect("prompt serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::schema(format!("prompt line {}", i + 1), e.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(PromptLedger { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

/// Window propagation contract: given the prompts issued at a keyframe and
/// the frame indices of its window (keyframe first), return one MaskSet per
/// window frame. Masks carry the prompting track id; a track may be absent
/// from any frame.
pub trait MaskPropagator {
    fn propagate(&mut self, prompts: &[Prompt], window: &[usize]) -> Result<Vec<MaskSet>>;
}

/// Path of the propagated mask file for `frame` in the window starting at
/// `keyframe`, relative to a replay root.
pub fn replay_path(root: &Path, keyframe: usize, frame: usize) -> PathBuf {
    root.join(format!("window_{keyframe:06}")).join(format!("frame_{frame:06}.json"))
}

/// Reads precomputed propagation results laid out as
/// `<root>/window_<kf>/frame_<f>.json`. Masks of tracks that were not
/// prompted are ignored.
pub struct ReplayPropagator {
    pub root: PathBuf,
    pub dims: (u32, u32),
}

impl ReplayPropagator {
    pub fn new(root: impl Into<PathBuf>, dims: (u32, u32)) -> Self {
        ReplayPropagator { root: root.into(), dims }
    }
}

impl MaskPropagator for ReplayPropagator {
    fn propagate(&mut self, prompts: &[Prompt], window: &[usize]) -> Result<Vec<MaskSet>> {
        let Some(&keyframe) = window.first() else {
            return Ok(Vec::new());
        };
        window
            .iter()
            .map(|&f| {
                let path = replay_path(&self.root, keyframe, f);
                let masks = read_mask_file(&path, self.dims).map_err(|e| match e {
                    Error::MissingFile(p) => Error::PropagatorFailure(format!("missing {}", p.display())),
                    Error::DimensionMismatch { expected, actual } => Error::PropagatorFailure(format!(
                        "{}: mask is {actual:?}, scene is {expected:?}",
                        path.display()
                    )),
                    other => other,
                })?;
                let mut kept = Vec::new();
                for m in masks {
                    let id = m.track_id.ok_or(Error::MissingTrackId { frame: f })?;
                    if prompts.iter().any(|p| p.track_id == id) {
                        kept.push(m.with_source(MaskSource::Propagated));
                    }
                }
                Ok(MaskSet::new(f, kept))
            })
            .collect()
    }
}

/// Wraps a propagator and writes every window it produces in the replay
/// layout, so a run can be replayed later.
pub struct RecordingPropagator<P> {
    pub inner: P,
    pub root: PathBuf,
}

impl<P: MaskPropagator> MaskPropagator for RecordingPropagator<P> {
    fn propagate(&mut self, prompts: &[Prompt], window: &[usize]) -> Result<Vec<MaskSet>> {
        let sets = self.inner.propagate(prompts, window)?;
        if let Some(&keyframe) = window.first() {
            for set in &sets {
                write_mask_file(&replay_path(&self.root, keyframe, set.frame_index), &set.masks)?;
            }
        }
        Ok(sets)
    }
}

impl<P: MaskPropagator + ?Sized> MaskPropagator for &mut P {
    fn propagate(&mut self, prompts: &[Prompt], window: &[usize]) -> Result<Vec<MaskSet>> {
        (**self).propagate(prompts, window)
    }
}

impl<P: MaskPropagator + ?Sized> MaskPropagator for Box<P> {
    fn propagate(&mut self, prompts: &[Prompt], window: &[usize]) -> Result<Vec<MaskSet>> {
        (**self).propagate(prompts, window)
    }
}

/// Propagates each prompt unchanged to every frame of the window.
#[derive(Debug, Default, Clone, Copy)]
pub struct StaticPropagator;

impl MaskPropagator for StaticPropagator {
    fn propagate(&mut self, prompts: &[Prompt], window: &[usize]) -> Result<Vec<MaskSet>> {
        Ok(window
            .iter()
            .map(|&f| {
                MaskSet::new(
                    f,
                    prompts
                        .iter()
                        .map(|p| p.mask.clone().with_track_id(p.track_id).with_source(MaskSource::Propagated))
                        .collect(),
                )
            })
            .collect())
    }
}
