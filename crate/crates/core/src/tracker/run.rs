use std::collections::{BTreeMap, BTreeSet};

use super::log::{TrackLog, TrackState};
use super::propagate::{MaskPropagator, PromptLedger};
use super::state::{init_first_window, optimal_match, update_states, TrackerConfig, TrackerState};
use crate::error::{Error, Result};
use crate::maskproc::MaskSet;
use crate::scene_io::{MaskSource, SceneManifest};

#[derive(Debug, Clone)]
pub struct TrackingOutput {
    /// One set per manifest frame, in manifest order.
    pub frames: Vec<MaskSet>,
    pub state: TrackerState,
    pub log: TrackLog,
    pub ledger: PromptLedger,
}

/// Keyframe positions `0, s, 2s, ...` below `frame_count`.
pub fn keyframe_positions(frame_count: usize, stride: usize) -> Vec<usize> {
    (0..frame_count).step_by(stride.max(1)).collect()
}

/// Runs windowed tracking over every frame of the manifest. Keyframes are
/// taken by position and looked up in `keyframe_detections` by frame index.
///
/// Each window spans `[k, k + s]` (clamped to the last frame), so window
/// ends and starts share a frame; that frame keeps the later window's masks.
/// A keyframe that is the final frame gets no matching or update; the
/// previous window's propagation is kept as is.
pub fn run_tracking(
    scene: &SceneManifest,
    keyframe_detections: &BTreeMap<usize, MaskSet>,
    propagator: &mut dyn MaskPropagator,
    cfg: &TrackerConfig,
) -> Result<TrackingOutput> {
    cfg.validate()?;
    let n = scene.frame_count();
    let dims = (scene.width, scene.height);
    let index = |pos: usize| scene.frames[pos].frame_index;
    let keyframes = keyframe_positions(n, cfg.stride);
    for &k in &keyframes {
        let set = keyframe_detections
            .get(&index(k))
            .ok_or(Error::MissingKeyframeDetections(index(k)))?;
        for m in &set.masks {
            if m.dims() != dims {
                return Err(Error::DimensionMismatch { expected: dims, actual: m.dims() });
            }
        }
    }

    let mut log = TrackLog::default();
    let mut ledger = PromptLedger::default();
    let mut state = TrackerState::default();
    let mut frames: Vec<MaskSet> = (0..n).map(|p| MaskSet::new(index(p), Vec::new())).collect();

    for (w, &k) in keyframes.iter().enumerate() {
        let kf = index(k);
        let detections = &keyframe_detections[&kf];
        if w == 0 {
            state = init_first_window(detections, state, &mut log)?;
        } else {
            if k == n - 1 {
                break;
            }
            let matches = optimal_match(&frames[k], detections, cfg.tau_iou, cfg.matching)?;
            state = update_states(state, &matches, detections, cfg, &mut log)?;
        }
        ledger.add_prompts(&state, kf);

        let end = (k + cfg.stride).min(n - 1);
        let window: Vec<usize> = (k..=end).map(index).collect();
        let prompts = ledger.at_keyframe(kf);
        let prompted: BTreeSet<u32> = prompts.iter().map(|p| p.track_id).collect();
        let sets = propagator.propagate(&prompts, &window)?;
        if sets.len() != window.len() {
            return Err(Error::PropagatorFailure(format!(
                "window at {kf}: {} frames returned, {} expected",
                sets.len(),
                window.len()
            )));
        }
        for (pos, (set, &f)) in (k..=end).zip(sets.into_iter().zip(&window)) {
            if set.frame_index != f {
                return Err(Error::PropagatorFailure(format!(
                    "window at {kf}: got frame {} where {f} was expected",
                    set.frame_index
                )));
            }
            let mut seen = BTreeSet::new();
            let mut masks = Vec::with_capacity(set.masks.len());
            for m in set.masks {
                if m.dims() != dims {
                    return Err(Error::PropagatorFailure(format!(
                        "frame {f}: mask is {:?}, scene is {dims:?}",
                        m.dims()
                    )));
                }
                let id = m
                    .track_id
                    .ok_or_else(|| Error::PropagatorFailure(format!("frame {f}: mask without track id")))?;
                if !prompted.contains(&id) {
                    continue;
                }
                if !seen.insert(id) {
                    return Err(Error::PropagatorFailure(format!("frame {f}: track {id} appears twice")));
                }
                if !m.is_empty() {
                    masks.push(m.with_source(MaskSource::Propagated));
                }
            }
            masks.sort_by_key(|m| m.track_id);
            frames[pos] = MaskSet::new(f, masks);
        }
    }

    for t in state.tracks.values_mut() {
        t.history.clear();
    }
    for set in &frames {
        for m in &set.masks {
            if let Some(t) = m.track_id.and_then(|id| state.tracks.get_mut(&id)) {
                t.history.push((set.frame_index, m.clone()));
            }
        }
    }
    debug_assert!(state.tracks.values().all(|t| t.state != TrackState::Active || t.dormancy_counter == 0));
    Ok(TrackingOutput { frames, state, log, ledger })
}
