//! Windowed cross-frame tracking: keyframe matching against propagated
//! masks, the Active/Dormant/Terminated lifecycle, and the prompt ledger
//! that drives a mask propagator.

mod assignment;
mod log;
mod propagate;
mod run;
mod state;

pub use assignment::{greedy_assignment, max_weight_assignment};
pub use log::{FromState, TrackLog, TrackState, Transition, TransitionReason};
pub use propagate::{
    replay_path, MaskPropagator, Prompt, PromptLedger, RecordingPropagator, ReplayPropagator,
    StaticPropagator,
};
pub use run::{keyframe_positions, run_tracking, TrackingOutput};
pub use state::{
    init_first_window, optimal_match, update_states, Match, MatchStrategy, Track, TrackerConfig,
    TrackerState,
};
