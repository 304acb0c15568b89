//! Mask set operations: overlap measures and containment-based removal of
//! fine masks that duplicate part of a coarse mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_io::{Granularity, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GranularityTag {
    Fine,
    Coarse,
    #[default]
    Untagged,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskSet {
    pub frame_index: usize,
    pub masks: Vec<Mask>,
    pub granularity_tag: GranularityTag,
}

impl MaskSet {
    pub fn new(frame_index: usize, masks: Vec<Mask>) -> Self {
        MaskSet {
            frame_index,
            masks,
            granularity_tag: GranularityTag::Untagged,
        }
    }

    pub fn tagged(frame_index: usize, masks: Vec<Mask>, tag: GranularityTag) -> Self {
        MaskSet {
            frame_index,
            masks,
            granularity_tag: tag,
        }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Common raster size, if any mask is present.
    pub fn dims(&self) -> Option<(u32, u32)> {
        self.masks.first().map(Mask::dims)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.dims() {
            for m in &self.masks {
                if m.dims() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: m.dims(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub tau_contain: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { tau_contain: 0.8 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_contain > 0.0 && self.tau_contain <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau_contain must be in (0, 1], got {}",
                self.tau_contain
            )));
        }
        Ok(())
    }
}

/// `|a ∩ b| / |a ∪ b|`, 0 when both are empty.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Fraction of `m` covered by `m_prime`.
pub fn containment_rate(m: &Mask, m_prime: &Mask) -> Result<f64> {
    let inter = m.intersection_area(m_prime)?;
    let area = m.area();
    if area == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(inter as f64 / area as f64)
}

/// Drops every fine mask whose containment rate in some coarse mask exceeds
/// `tau_contain`, then appends all coarse masks. Fine survivors keep their
/// input order and precede the coarse masks.
pub fn filter_redundant(fine: &MaskSet, coarse: &MaskSet, cfg: &FilterConfig) -> Result<MaskSet> {
    cfg.validate()?;
    fine.validate()?;
    coarse.validate()?;
    if let (Some(a), Some(b)) = (fine.dims(), coarse.dims()) {
        if a != b {
            return Err(Error::DimensionMismatch {
                expected: b,
                actual: a,
            });
        }
    }
    let mut masks = Vec::with_capacity(fine.len() + coarse.len());
    for f in &fine.masks {
        let area = f.area();
        if area == 0 {
            return Err(Error::EmptyMask);
        }
        let mut redundant = false;
        for c in &coarse.masks {
            let rate = f.intersection_area(c)? as f64 / area as f64;
            if rate > cfg.tau_contain {
                redundant = true;
                break;
            }
        }
        if !redundant {
            masks.push(f.clone());
        }
    }
    masks.extend(coarse.masks.iter().cloned());
    Ok(MaskSet::new(fine.frame_index, masks))
}

/// Splits a frame's masks by their per-mask granularity. Masks without a
/// tag count as coarse, so they are never removed.
pub fn split_by_granularity(frame_index: usize, masks: &[Mask]) -> (MaskSet, MaskSet) {
    let (fine, coarse): (Vec<Mask>, Vec<Mask>) = masks
        .iter()
        .cloned()
        .partition(|m| m.granularity == Some(Granularity::Fine));
    (
        MaskSet::tagged(frame_index, fine, GranularityTag::Fine),
        MaskSet::tagged(frame_index, coarse, GranularityTag::Coarse),
    )
}

/// Test helper for untagged sets: masks with area strictly below the median
/// are treated as fine, the rest as coarse.
pub fn split_by_median_area(set: &MaskSet) -> (MaskSet, MaskSet) {
    let mut areas: Vec<u64> = set.masks.iter().map(Mask::area).collect();
    areas.sort_unstable();
    let median = areas.get(areas.len() / 2).copied().unwrap_or(0);
    let (fine, coarse): (Vec<Mask>, Vec<Mask>) =
        set.masks.iter().cloned().partition(|m| m.area() < median);
    (
        MaskSet::tagged(set.frame_index, fine, GranularityTag::Fine),
        MaskSet::tagged(set.frame_index, coarse, GranularityTag::Coarse),
    )
}
