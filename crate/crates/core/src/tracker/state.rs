use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::assignment::{greedy_assignment, max_weight_assignment};
use super::log::{FromState, TrackLog, TrackState, Transition, TransitionReason};
use crate::error::{Error, Result};
use crate::maskproc::{mask_iou, MaskSet};
use crate::scene_io::{Mask, MaskSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    #[default]
    Hungarian,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Keyframe stride in frames.
    pub stride: usize,
    pub tau_iou: f64,
    /// Keyframe cycles a track may stay dormant before termination.
    pub tau_dorm: u32,
    pub matching: MatchStrategy,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            stride: 10,
            tau_iou: 0.5,
            tau_dorm: 3,
            matching: MatchStrategy::Hungarian,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidConfig("stride must be >= 1".into()));
        }
        if !(self.tau_iou > 0.0 && self.tau_iou < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau_iou must be in (0, 1), got {}",
                self.tau_iou
            )));
        }
        if self.tau_dorm == 0 {
            return Err(Error::InvalidConfig("tau_dorm must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u32,
    pub state: TrackState,
    pub dormancy_counter: u32,
    /// Detection mask from the most recent keyframe the track was matched at.
    pub last_keyframe_mask: Mask,
    pub first_seen: usize,
    /// Output masks carrying this track's id, in frame order.
    pub history: Vec<(usize, Mask)>,
}

/// All tracks of a run keyed by id. Each track is in exactly one of the
/// active, dormant or terminated collections by virtue of its `state`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackerState {
    pub tracks: BTreeMap<u32, Track>,
    pub next_id: u32,
}

impl TrackerState {
    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty() && self.next_id == 0
    }

    fn in_state(&self, s: TrackState) -> impl Iterator<Item = &Track> {
        self.tracks.values().filter(move |t| t.state == s)
    }

    pub fn active(&self) -> impl Iterator<Item = &Track> {
        self.in_state(TrackState::Active)
    }

    pub fn dormant(&self) -> impl Iterator<Item = &Track> {
        self.in_state(TrackState::Dormant)
    }

    pub fn terminated(&self) -> impl Iterator<Item = &Track> {
        self.in_state(TrackState::Terminated)
    }

    fn spawn(&mut self, mask: &Mask, keyframe: usize, log: &mut TrackLog) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        self.tracks.insert(
            id,
            Track {
                track_id: id,
                state: TrackState::Active,
                dormancy_counter: 0,
                last_keyframe_mask: keyframe_mask(mask, id),
                first_seen: keyframe,
                history: Vec::new(),
            },
        );
        log.push(Transition {
            keyframe,
            track_id: id,
            from_state: FromState::New,
            to_state: TrackState::Active,
            reason: TransitionReason::NewDetection,
            iou: None,
        });
        id
    }
}

fn keyframe_mask(det: &Mask, id: u32) -> Mask {
    det.clone().with_track_id(id).with_source(MaskSource::Detection)
}

/// One accepted pairing of a propagated track mask with a detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub track_id: u32,
    pub detection_index: usize,
    pub iou: f64,
}

/// Every detection of the first keyframe becomes an Active track, ids
/// `0..N` in detection order.
pub fn init_first_window(
    detections: &MaskSet,
    state: TrackerState,
    log: &mut TrackLog,
) -> Result<TrackerState> {
    if !state.is_empty() {
        return Err(Error::NonEmptyState);
    }
    detections.validate()?;
    let mut state = state;
    for det in &detections.masks {
        state.spawn(det, detections.frame_index, log);
    }
    Ok(state)
}

/// One-to-one matching between propagated track masks and detections that
/// maximizes total IoU over pairs with IoU above `tau_iou`. Pairs at or
/// below the threshold are never reported. Output is sorted by track id.
pub fn optimal_match(
    propagated: &MaskSet,
    detections: &MaskSet,
    tau_iou: f64,
    strategy: MatchStrategy,
) -> Result<Vec<Match>> {
    // One row per track id; a duplicate id keeps its first mask.
    let mut rows: BTreeMap<u32, &Mask> = BTreeMap::new();
    for m in &propagated.masks {
        let id = m.track_id.ok_or(Error::MissingTrackId {
            frame: propagated.frame_index,
        })?;
        rows.entry(id).or_insert(m);
    }
    let rows: Vec<(u32, &Mask)> = rows.into_iter().collect();
    let iou: Vec<Vec<f64>> = rows
        .iter()
        .map(|(_, p)| {
            detections
                .masks
                .iter()
                .map(|d| mask_iou(p, d))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let gated: Vec<Vec<f64>> = iou
        .iter()
        .map(|row| row.iter().map(|&v| if v > tau_iou { v } else { 0.0 }).collect())
        .collect();
    let assignment = match strategy {
        MatchStrategy::Hungarian => max_weight_assignment(&gated),
        MatchStrategy::Greedy => greedy_assignment(&gated),
    };
    Ok(assignment
        .into_iter()
        .enumerate()
        .filter_map(|(r, c)| {
            let c = c?;
            (iou[r][c] > tau_iou).then_some(Match {
                track_id: rows[r].0,
                detection_index: c,
                iou: iou[r][c],
            })
        })
        .collect())
}

/// Applies one keyframe's lifecycle update, in this order:
///
/// 1. matched Active tracks stay Active and adopt the detection mask;
/// 2. unmatched Active tracks become Dormant with counter 1;
/// 3. leftover detections reactivate the Dormant track (dormant before this
///    keyframe) whose last keyframe mask they overlap best, if IoU > tau_iou;
/// 4. remaining Dormant tracks tick their counter and terminate once it
///    exceeds tau_dorm;
/// 5. detections still unused start new tracks.
///
/// Matches that name a track which is not Active are ignored.
pub fn update_states(
    mut state: TrackerState,
    matches: &[Match],
    detections: &MaskSet,
    cfg: &TrackerConfig,
    log: &mut TrackLog,
) -> Result<TrackerState> {
    let keyframe = detections.frame_index;
    let mut det_used = vec![false; detections.len()];
    let by_track: BTreeMap<u32, &Match> = matches.iter().map(|m| (m.track_id, m)).collect();
    let dormant_before: Vec<u32> = state.dormant().map(|t| t.track_id).collect();

    for track in state.tracks.values_mut() {
        if track.state != TrackState::Active {
            continue;
        }
        match by_track.get(&track.track_id) {
            Some(m) if m.detection_index < det_used.len() && !det_used[m.detection_index] => {
                det_used[m.detection_index] = true;
                track.last_keyframe_mask = keyframe_mask(&detections.masks[m.detection_index], track.track_id);
                log.push(Transition {
                    keyframe,
                    track_id: track.track_id,
                    from_state: FromState::Active,
                    to_state: TrackState::Active,
                    reason: TransitionReason::Matched,
                    iou: Some(m.iou),
                });
            }
            _ => {
                track.state = TrackState::Dormant;
                track.dormancy_counter = 1;
                log.push(Transition {
                    keyframe,
                    track_id: track.track_id,
                    from_state: FromState::Active,
                    to_state: TrackState::Dormant,
                    reason: TransitionReason::Unmatched,
                    iou: None,
                });
            }
        }
    }

    // Reactivation: best pairs first; ties by lowest track id, then lowest
    // detection index.
    let mut candidates: Vec<(f64, u32, usize)> = Vec::new();
    for &id in &dormant_before {
        let last = &state.tracks[&id].last_keyframe_mask;
        for (i, det) in detections.masks.iter().enumerate() {
            if det_used[i] {
                continue;
            }
            let iou = mask_iou(last, det)?;
            if iou > cfg.tau_iou {
                candidates.push((iou, id, i));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut reactivated = Vec::new();
    for (iou, id, i) in candidates {
        if det_used[i] || reactivated.contains(&id) {
            continue;
        }
        det_used[i] = true;
        reactivated.push(id);
        let track = state.tracks.get_mut(&id).unwrap();
        track.state = TrackState::Active;
        track.dormancy_counter = 0;
        track.last_keyframe_mask = keyframe_mask(&detections.masks[i], id);
        log.push(Transition {
            keyframe,
            track_id: id,
            from_state: FromState::Dormant,
            to_state: TrackState::Active,
            reason: TransitionReason::Reactivated,
            iou: Some(iou),
        });
    }

    for id in dormant_before {
        if reactivated.contains(&id) {
            continue;
        }
        let track = state.tracks.get_mut(&id).unwrap();
        track.dormancy_counter += 1;
        let (to_state, reason) = if track.dormancy_counter > cfg.tau_dorm {
            (TrackState::Terminated, TransitionReason::DormancyExceeded)
        } else {
            (TrackState::Dormant, TransitionReason::StillUnmatched)
        };
        track.state = to_state;
        log.push(Transition {
            keyframe,
            track_id: id,
            from_state: FromState::Dormant,
            to_state,
            reason,
            iou: None,
        });
    }

    for (i, det) in detections.masks.iter().enumerate() {
        if !det_used[i] {
            state.spawn(det, keyframe, log);
        }
    }
    Ok(state)
}
