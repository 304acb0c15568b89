use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stream_seed;
use crate::error::Result;
use crate::maskproc::MaskSet;
use crate::scene_io::{decode_rle, encode_rle, Mask, MaskSource};
use crate::tracker::{MaskPropagator, Prompt};

/// Ground-truth propagator. Each prompt is bound, for the whole window, to
/// the ground-truth object it overlaps most at the keyframe (ties to the
/// smaller instance id). That object's mask is returned on every window
/// frame where it is visible. Outputs never overlap: when several prompts
/// bind to the same object, only the smallest track id receives it. With `erosion > 0` each boundary pixel is
/// dropped with that probability, independently per frame and track.
#[derive(Debug, Clone)]
pub struct OraclePropagator {
    gt: BTreeMap<usize, Vec<Mask>>,
    pub erosion: f64,
    pub seed: u64,
}

impl OraclePropagator {
    /// `gt_masks` carry the instance id in `track_id`.
    pub fn new(gt_masks: &[MaskSet]) -> Self {
        OraclePropagator {
            gt: gt_masks.iter().map(|s| (s.frame_index, s.masks.clone())).collect(),
            erosion: 0.0,
            seed: 0,
        }
    }

    pub fn with_erosion(mut self, probability: f64, seed: u64) -> Self {
        self.erosion = probability;
        self.seed = seed;
        self
    }

    fn bind(&self, prompt: &Mask, keyframe: usize) -> Result<Option<u32>> {
        let mut best: Option<(u64, u32)> = None;
        for m in self.gt.get(&keyframe).into_iter().flatten() {
            let Some(id) = m.track_id else { continue };
            let overlap = m.intersection_area(prompt)?;
            if overlap > 0 && best.is_none_or(|(b, bid)| overlap > b || (overlap == b && id < bid)) {
                best = Some((overlap, id));
            }
        }
        Ok(best.map(|(_, id)| id))
    }

    fn erode(&self, m: &Mask, frame: usize, track: u32) -> Option<Mask> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, frame, track));
        let b = decode_rle(m).ok()?;
        let (w, h) = (b.width, b.height);
        let mut out = b.clone();
        for y in 0..h {
            for x in 0..w {
                if !b.get(x, y) {
                    continue;
                }
                let boundary = x == 0
                    || y == 0
                    || x + 1 == w
                    || y + 1 == h
                    || !b.get(x - 1, y)
                    || !b.get(x + 1, y)
                    || !b.get(x, y - 1)
                    || !b.get(x, y + 1);
                if boundary && rng.gen_bool(self.erosion) {
                    out.set(x, y, false);
                }
            }
        }
        let mut eroded = encode_rle(&out).ok()?;
        eroded.score = m.score;
        Some(eroded)
    }
}

impl MaskPropagator for OraclePropagator {
    fn propagate(&mut self, prompts: &[Prompt], window: &[usize]) -> Result<Vec<MaskSet>> {
        let Some(&keyframe) = window.first() else {
            return Ok(Vec::new());
        };
        let mut order: Vec<&Prompt> = prompts.iter().collect();
        order.sort_by_key(|p| p.track_id);
        let mut bound: Vec<(u32, u32)> = Vec::new();
        for p in order {
            if let Some(obj) = self.bind(&p.mask, keyframe)? {
                if bound.iter().all(|&(_, o)| o != obj) {
                    bound.push((p.track_id, obj));
                }
            }
        }
        Ok(window
            .iter()
            .map(|&f| {
                let frame_gt = self.gt.get(&f).map(Vec::as_slice).unwrap_or(&[]);
                let masks = bound
                    .iter()
                    .filter_map(|&(track, obj)| {
                        let gt = frame_gt.iter().find(|m| m.track_id == Some(obj))?;
                        let m = if self.erosion > 0.0 { self.erode(gt, f, track)? } else { gt.clone() };
                        Some(m.with_track_id(track).with_source(MaskSource::Propagated))
                    })
                    .collect();
                MaskSet::new(f, masks)
            })
            .collect())
    }
}
