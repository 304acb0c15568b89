//! Temporally consistent instance pseudo-labels from RGB-D video.
//!
//! Per-frame 2D instance masks are cleaned of redundant parts, tracked
//! across keyframe windows with an Active/Dormant/Terminated lifecycle,
//! lifted into world space through depth and camera poses, and fused into
//! per-point instance labels.

pub mod error;
pub mod eval;
pub mod fusion;
pub mod lift;
pub mod maskproc;
pub mod pipeline;
pub mod scene_io;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
