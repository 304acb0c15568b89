use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{stream_seed, Fragmentation};
use crate::maskproc::MaskSet;
use crate::scene_io::{encode_rle, Bitmap, Granularity, Mask};

/// Splits a mask into up to `parts` disjoint pieces by straight parallel
/// cuts across a random direction. Pixels are ordered by their projection
/// on the cut normal and cut at random ranks, so every piece is non-empty
/// and the union is the input. Masks with fewer than two pixels come back
/// whole. Pieces keep the input's track id and score and are tagged Fine.
pub fn split_mask(mask: &Mask, parts: u32, rng: &mut impl Rng) -> Vec<Mask> {
    let area = mask.area() as usize;
    let n = (parts as usize).min(area);
    if n < 2 {
        return vec![mask.clone()];
    }
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let (c, s) = (theta.cos(), theta.sin());
    let mut pixels: Vec<(f64, u32, u32)> = Vec::with_capacity(area);
    mask.for_each_pixel(|x, y| pixels.push((x as f64 * c + y as f64 * s, x, y)));
    pixels.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));

    let mut cuts: Vec<usize> = sample(rng, area - 1, n - 1).into_iter().map(|r| r + 1).collect();
    cuts.sort_unstable();
    cuts.push(area);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for end in cuts {
        let mut b = Bitmap::new(mask.width(), mask.height());
        for &(_, x, y) in &pixels[start..end] {
            b.set(x, y, true);
        }
        let mut part = encode_rle(&b).expect("cut ranks are distinct");
        part.track_id = mask.track_id;
        part.score = mask.score;
        part.source = mask.source;
        out.push(part.with_granularity(Some(Granularity::Fine)));
        start = end;
    }
    out
}

fn object_rng(seed: u64, frame: usize, key: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, frame, key))
}

fn object_key(m: &Mask, i: usize) -> u32 {
    m.track_id.unwrap_or(i as u32)
}

/// Replaces each mask, with the configured probability, by its parts. The
/// draw for a mask depends only on `(seed, frame, track id)`.
pub fn fragment_masks(gt: &MaskSet, cfg: &Fragmentation, seed: u64) -> MaskSet {
    let mut out = Vec::new();
    for (i, m) in gt.masks.iter().enumerate() {
        let mut rng = object_rng(seed, gt.frame_index, object_key(m, i));
        if rng.gen_bool(cfg.probability) {
            out.extend(split_mask(m, cfg.parts, &mut rng));
        } else {
            out.push(m.clone());
        }
    }
    MaskSet::new(gt.frame_index, out)
}

/// Detector output for one frame of ground truth. A fragmented object
/// yields only its Fine parts; any other object yields its whole mask
/// tagged Coarse followed by redundant Fine parts. Track ids are removed.
pub fn simulate_detections(gt: &MaskSet, cfg: &Fragmentation, seed: u64) -> Vec<Mask> {
    let mut out = Vec::new();
    for (i, m) in gt.masks.iter().enumerate() {
        let mut rng = object_rng(seed, gt.frame_index, object_key(m, i));
        let mut whole = m.clone();
        whole.track_id = None;
        if rng.gen_bool(cfg.probability) {
            out.extend(split_mask(&whole, cfg.parts, &mut rng));
        } else {
            let parts = split_mask(&whole, cfg.parts, &mut rng);
            out.push(whole.with_granularity(Some(Granularity::Coarse)));
            if parts.len() > 1 {
                out.extend(parts);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskproc::{filter_redundant, split_by_granularity, FilterConfig};
    use crate::scene_io::decode_rle;
    use proptest::prelude::*;

    fn blob(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32, id: u32) -> Mask {
        let mut b = Bitmap::new(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                b.set(x, y, true);
            }
        }
        encode_rle(&b).unwrap().with_track_id(id)
    }

    fn set() -> MaskSet {
        MaskSet::new(3, vec![blob(20, 20, 0, 0, 8, 8, 1), blob(20, 20, 10, 10, 19, 17, 2)])
    }

    #[test]
    fn probability_zero_is_identity() {
        let cfg = Fragmentation { probability: 0.0, parts: 3 };
        assert_eq!(fragment_masks(&set(), &cfg, 42), set());
    }

    #[test]
    fn probability_one_splits_everything() {
        let cfg = Fragmentation { probability: 1.0, parts: 2 };
        let out = fragment_masks(&set(), &cfg, 42);
        assert_eq!(out.len(), 4);
        assert_eq!(out, fragment_masks(&set(), &cfg, 42));
        assert_ne!(out, fragment_masks(&set(), &cfg, 43));
    }

    #[test]
    fn redundant_parts_are_filtered() {
        let cfg = Fragmentation { probability: 0.0, parts: 3 };
        let det = simulate_detections(&set(), &cfg, 1);
        assert_eq!(det.len(), 8);
        let (fine, coarse) = split_by_granularity(3, &det);
        let kept = filter_redundant(&fine, &coarse, &FilterConfig::default()).unwrap();
        assert_eq!(kept.len(), 2);
        assert!(kept.masks.iter().all(|m| m.track_id.is_none()));
    }

    proptest! {
        #[test]
        fn parts_partition_the_mask(x0 in 0u32..10, y0 in 0u32..10, w in 1u32..10, h in 1u32..10,
                                    parts in 2u32..=4, seed in any::<u64>()) {
            let m = blob(20, 20, x0, y0, x0 + w, y0 + h, 0);
            let pieces = split_mask(&m, parts, &mut ChaCha8Rng::seed_from_u64(seed));
            let area = m.area() as usize;
            prop_assert_eq!(pieces.len(), (parts as usize).min(area).max(1));
            let mut cover = vec![0u8; 400];
            for p in &pieces {
                prop_assert!(!p.is_empty());
                for (i, b) in decode_rle(p).unwrap().data.iter().enumerate() {
                    cover[i] += *b as u8;
                }
            }
            let whole = decode_rle(&m).unwrap();
            for i in 0..400 {
                prop_assert_eq!(cover[i], whole.data[i] as u8);
            }
        }
    }
}
