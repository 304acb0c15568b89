use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrackState {
    Active,
    Dormant,
    Terminated,
}

/// Origin state of a logged transition; `New` covers track creation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FromState {
    New,
    Active,
    Dormant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionReason {
    NewDetection,
    Matched,
    Unmatched,
    StillUnmatched,
    Reactivated,
    DormancyExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub keyframe: usize,
    pub track_id: u32,
    pub from_state: FromState,
    pub to_state: TrackState,
    pub reason: TransitionReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
}

impl Transition {
    /// True for the six lifecycle edges:
    /// New→Active, Active→Active, Active→Dormant, Dormant→Dormant,
    /// Dormant→Active, Dormant→Terminated.
    pub fn is_legal_edge(&self) -> bool {
        use FromState as F;
        use TrackState as T;
        matches!(
            (self.from_state, self.to_state),
            (F::New, T::Active)
                | (F::Active, T::Active)
                | (F::Active, T::Dormant)
                | (F::Dormant, T::Dormant)
                | (F::Dormant, T::Active)
                | (F::Dormant, T::Terminated)
        )
    }
}

/// Append-only record of every state transition in a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackLog {
    pub transitions: Vec<Transition>,
}

impl TrackLog {
    pub fn push(&mut self, t: Transition) {
        self.transitions.push(t);
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn for_track(&self, id: u32) -> impl Iterator<Item = &Transition> {
        self.transitions.iter().filter(move |t| t.track_id == id)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.transitions {
            out.push_str(&serde_json::to_string(t).expect("transition serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let transitions = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::schema(format!("tracklog line {}", i + 1), e.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(TrackLog { transitions })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    /// Replays the log and checks that it describes a legal lifecycle:
    /// only the six edges occur, every track starts with New→Active exactly
    /// once, each transition leaves from the state the track is in, and
    /// nothing follows Terminated. Returns the first violation.
    pub fn check_soundness(&self) -> std::result::Result<(), String> {
        let mut current: BTreeMap<u32, TrackState> = BTreeMap::new();
        for (i, t) in self.transitions.iter().enumerate() {
            if !t.is_legal_edge() {
                return Err(format!("record {i}: illegal edge {:?} -> {:?}", t.from_state, t.to_state));
            }
            match (current.get(&t.track_id), t.from_state) {
                (None, FromState::New) => {}
                (Some(_), FromState::New) => {
                    return Err(format!("record {i}: track {} created twice", t.track_id))
                }
                (None, _) => {
                    return Err(format!("record {i}: track {} used before creation", t.track_id))
                }
                (Some(TrackState::Terminated), _) => {
                    return Err(format!("record {i}: track {} left Terminated", t.track_id))
                }
                (Some(s), f) => {
                    let expected = match s {
                        TrackState::Active => FromState::Active,
                        TrackState::Dormant => FromState::Dormant,
                        TrackState::Terminated => unreachable!(),
                    };
                    if f != expected {
                        return Err(format!(
                            "record {i}: track {} is {s:?} but transition leaves {f:?}",
                            t.track_id
                        ));
                    }
                }
            }
            current.insert(t.track_id, t.to_state);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(k: usize, id: u32, f: FromState, to: TrackState) -> Transition {
        Transition { keyframe: k, track_id: id, from_state: f, to_state: to, reason: TransitionReason::Matched, iou: None }
    }

    #[test]
    fn six_edges_only() {
        use FromState as F;
        use TrackState as T;
        let legal = [
            (F::New, T::Active),
            (F::Active, T::Active),
            (F::Active, T::Dormant),
            (F::Dormant, T::Dormant),
            (F::Dormant, T::Active),
            (F::Dormant, T::Terminated),
        ];
        for f in [F::New, F::Active, F::Dormant] {
            for t in [T::Active, T::Dormant, T::Terminated] {
                assert_eq!(tr(0, 0, f, t).is_legal_edge(), legal.contains(&(f, t)));
            }
        }
    }

    #[test]
    fn soundness_detects_resurrection() {
        let mut log = TrackLog::default();
        log.push(tr(0, 1, FromState::New, TrackState::Active));
        log.push(tr(10, 1, FromState::Active, TrackState::Dormant));
        log.push(tr(20, 1, FromState::Dormant, TrackState::Terminated));
        assert!(log.check_soundness().is_ok());
        log.push(tr(30, 1, FromState::Dormant, TrackState::Active));
        assert!(log.check_soundness().unwrap_err().contains("Terminated"));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut log = TrackLog::default();
        log.push(Transition { iou: Some(0.75), ..tr(0, 2, FromState::New, TrackState::Active) });
        let text = log.to_jsonl();
        assert_eq!(
            text,
            "{\"keyframe\":0,\"track_id\":2,\"from_state\":\"New\",\"to_state\":\"Active\",\"reason\":\"matched\",\"iou\":0.75}\n"
        );
        assert_eq!(TrackLog::from_jsonl(&text).unwrap(), log);
    }
}
