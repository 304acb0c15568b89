//! Binary instance masks stored as row-major run-length counts.
//!
//! The counts follow the COCO uncompressed convention (alternating
//! background/foreground runs, first run is background and may be 0), but
//! the pixels are walked in row-major order: pixel `(x, y)` is flat index
//! `y * width + x`. COCO itself is column-major; masks exchanged with COCO
//! tooling need transposing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum MaskSource {
    #[default]
    Detection,
    Propagated,
}

/// Segmentation granularity a mask was produced at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Granularity {
    Fine,
    Coarse,
}

/// Dense binary raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Self {
        Bitmap {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::LengthMismatch(
                data.len(),
                width as usize * height as usize,
            ));
        }
        Ok(Bitmap { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    pub fn count(&self) -> u64 {
        self.data.iter().filter(|&&b| b).count() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MaskRecord", into = "MaskRecord")]
pub struct Mask {
    width: u32,
    height: u32,
    rle: Vec<u32>,
    pub score: Option<f64>,
    pub track_id: Option<u32>,
    pub source: MaskSource,
    pub granularity: Option<Granularity>,
}

/// On-disk shape of a mask record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskRecord {
    width: u32,
    height: u32,
    rle: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    track_id: Option<u32>,
    source: MaskSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    granularity: Option<Granularity>,
}

impl TryFrom<MaskRecord> for Mask {
    type Error = Error;

    fn try_from(r: MaskRecord) -> Result<Self> {
        if let Some(s) = r.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::schema("score", format!("{s} outside [0, 1]")));
            }
        }
        let mut m = Mask::from_counts(r.width, r.height, r.rle)?;
        m.score = r.score;
        m.track_id = r.track_id;
        m.source = r.source;
        m.granularity = r.granularity;
        Ok(m)
    }
}

impl From<Mask> for MaskRecord {
    fn from(m: Mask) -> Self {
        MaskRecord {
            width: m.width,
            height: m.height,
            rle: m.rle,
            score: m.score,
            track_id: m.track_id,
            source: m.source,
            granularity: m.granularity,
        }
    }
}

impl Mask {
    /// Builds a mask from raw counts. The counts must cover the raster
    /// exactly; zero-area masks are allowed in memory.
    pub fn from_counts(width: u32, height: u32, rle: Vec<u32>) -> Result<Self> {
        let total: u64 = rle.iter().map(|&c| c as u64).sum();
        let expected = width as u64 * height as u64;
        if expected > u32::MAX as u64 {
            return Err(Error::InvariantViolation(format!(
                "raster {width}x{height} too large for u32 run offsets"
            )));
        }
        if total != expected {
            return Err(Error::CorruptRle(format!(
                "counts sum to {total}, raster has {expected} pixels"
            )));
        }
        Ok(Mask {
            width,
            height,
            rle,
            score: None,
            track_id: None,
            source: MaskSource::Detection,
            granularity: None,
        })
    }

    /// Builds a mask from sorted, non-overlapping foreground runs
    /// `(start, len)` on the flat row-major index.
    pub fn from_runs(width: u32, height: u32, runs: &[(u32, u32)]) -> Result<Self> {
        let n = width as u64 * height as u64;
        let mut counts = Vec::with_capacity(runs.len() * 2 + 1);
        let mut cursor = 0u64;
        for &(start, len) in runs {
            if len == 0 {
                continue;
            }
            let start = start as u64;
            if start < cursor || start + len as u64 > n {
                return Err(Error::CorruptRle("runs overlap or exceed raster".into()));
            }
            if start == cursor && !counts.is_empty() {
                // Adjacent to previous run: extend it.
                *counts.last_mut().unwrap() += len;
            } else {
                counts.push((start - cursor) as u32);
                counts.push(len);
            }
            cursor = start + len as u64;
        }
        if cursor < n || counts.is_empty() {
            counts.push((n - cursor) as u32);
        }
        Mask::from_counts(width, height, counts)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn rle(&self) -> &[u32] {
        &self.rle
    }

    pub fn area(&self) -> u64 {
        self.rle.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn with_track_id(mut self, id: u32) -> Self {
        self.track_id = Some(id);
        self
    }

    pub fn with_source(mut self, source: MaskSource) -> Self {
        self.source = source;
        self
    }

    pub fn with_granularity(mut self, g: Option<Granularity>) -> Self {
        self.granularity = g;
        self
    }

    /// Foreground runs as `(start, len)` on the flat index, in order.
    pub fn runs(&self) -> Runs<'_> {
        Runs {
            counts: &self.rle,
            idx: 0,
            pos: 0,
        }
    }

    /// Calls `f(x, y)` for every foreground pixel in row-major order.
    pub fn for_each_pixel(&self, mut f: impl FnMut(u32, u32)) {
        let w = self.width as u64;
        for (start, len) in self.runs() {
            let mut flat = start as u64;
            let end = flat + len as u64;
            while flat < end {
                let y = flat / w;
                let x0 = flat % w;
                let row_end = ((y + 1) * w).min(end);
                for x in x0..x0 + (row_end - flat) {
                    f(x as u32, y as u32);
                }
                flat = row_end;
            }
        }
    }

    /// Axis-aligned bounding box `(x0, y0, x1, y1)`, inclusive; `None` if empty.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let w = self.width as u64;
        let mut bb: Option<(u32, u32, u32, u32)> = None;
        for (start, len) in self.runs() {
            let s = start as u64;
            let e = s + len as u64 - 1;
            let (ys, ye) = ((s / w) as u32, (e / w) as u32);
            let (xs, xe) = if ys == ye {
                ((s % w) as u32, (e % w) as u32)
            } else {
                (0, self.width - 1)
            };
            bb = Some(match bb {
                None => (xs, ys, xe, ye),
                Some((a, b, c, d)) => (a.min(xs), b.min(ys), c.max(xe), d.max(ye)),
            });
        }
        bb
    }

    pub fn check_same_dims(&self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    /// `|self ∩ other|` by walking both run lists.
    pub fn intersection_area(&self, other: &Mask) -> Result<u64> {
        self.check_same_dims(other)?;
        let mut a = self.runs().peekable();
        let mut b = other.runs().peekable();
        let mut total = 0u64;
        while let (Some(&(sa, la)), Some(&(sb, lb))) = (a.peek(), b.peek()) {
            let (ea, eb) = (sa as u64 + la as u64, sb as u64 + lb as u64);
            let lo = (sa as u64).max(sb as u64);
            let hi = ea.min(eb);
            if hi > lo {
                total += hi - lo;
            }
            if ea <= eb {
                a.next();
            } else {
                b.next();
            }
        }
        Ok(total)
    }
}

pub struct Runs<'a> {
    counts: &'a [u32],
    idx: usize,
    pos: u32,
}

impl Iterator for Runs<'_> {
    type Item = (u32, u32);

    fn next(&mut self) -> Option<(u32, u32)> {
        while self.idx < self.counts.len() {
            let c = self.counts[self.idx];
            let fg = self.idx % 2 == 1;
            let start = self.pos;
            self.pos += c;
            self.idx += 1;
            if fg && c > 0 {
                return Some((start, c));
            }
        }
        None
    }
}

/// Encodes a bitmap into row-major RLE. Fails on an all-background bitmap.
pub fn encode_rle(bitmap: &Bitmap) -> Result<Mask> {
    let n = bitmap.width as usize * bitmap.height as usize;
    if bitmap.data.len() != n {
        return Err(Error::LengthMismatch(bitmap.data.len(), n));
    }
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &v in &bitmap.data {
        if v != current {
            counts.push(run);
            run = 0;
            current = v;
        }
        run += 1;
    }
    counts.push(run);
    if counts.len() < 2 {
        return Err(Error::EmptyMask);
    }
    Mask::from_counts(bitmap.width, bitmap.height, counts)
}

/// Decodes a mask. Counts are re-checked so a mask assembled by hand can
/// never write outside the raster.
pub fn decode_rle(mask: &Mask) -> Result<Bitmap> {
    let n = mask.width as usize * mask.height as usize;
    let mut data = vec![false; n];
    let mut pos = 0usize;
    for (i, &c) in mask.rle.iter().enumerate() {
        let end = pos
            .checked_add(c as usize)
            .filter(|&e| e <= n)
            .ok_or_else(|| Error::CorruptRle("counts overrun raster".into()))?;
        if i % 2 == 1 {
            data[pos..end].fill(true);
        }
        pos = end;
    }
    if pos != n {
        return Err(Error::CorruptRle(format!(
            "counts cover {pos} of {n} pixels"
        )));
    }
    Ok(Bitmap {
        width: mask.width,
        height: mask.height,
        data,
    })
}
