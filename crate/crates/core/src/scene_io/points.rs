use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const GLPT_MAGIC: &[u8; 4] = b"GLPT";
const RECORD_BYTES: usize = 8 * 3 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub instance_id: u32,
    pub confidence: f32,
}

impl LabeledPoint {
    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPointSet {
    pub points: Vec<LabeledPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    Binary,
    ColoredPly,
}

impl LabeledPointSet {
    pub fn new(points: Vec<LabeledPoint>) -> Self {
        LabeledPointSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sorted distinct instance ids.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.points.iter().map(|p| p.instance_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::InvariantViolation(format!("point {i} is not finite")));
            }
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(Error::InvariantViolation(format!(
                    "point {i} confidence {} outside [0, 1]",
                    p.confidence
                )));
            }
        }
        Ok(())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + self.points.len() * RECORD_BYTES);
        buf.extend_from_slice(GLPT_MAGIC);
        buf.extend_from_slice(&(self.points.len() as u32).to_le_bytes());
        for p in &self.points {
            buf.extend_from_slice(&p.x.to_le_bytes());
            buf.extend_from_slice(&p.y.to_le_bytes());
            buf.extend_from_slice(&p.z.to_le_bytes());
            buf.extend_from_slice(&p.instance_id.to_le_bytes());
            buf.extend_from_slice(&p.confidence.to_le_bytes());
        }
        buf
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::schema("labeled points", d);
        if bytes.len() < 8 || &bytes[..4] != GLPT_MAGIC {
            return Err(bad("missing GLPT header".into()));
        }
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != count * RECORD_BYTES {
            return Err(bad(format!(
                "{count} records declared, {} body bytes present",
                body.len()
            )));
        }
        let f64_at = |r: &[u8], o: usize| f64::from_le_bytes(r[o..o + 8].try_into().unwrap());
        let points = body
            .chunks_exact(RECORD_BYTES)
            .map(|r| LabeledPoint {
                x: f64_at(r, 0),
                y: f64_at(r, 8),
                z: f64_at(r, 16),
                instance_id: u32::from_le_bytes(r[24..28].try_into().unwrap()),
                confidence: f32::from_le_bytes(r[28..32].try_into().unwrap()),
            })
            .collect();
        Ok(LabeledPointSet { points })
    }

    fn to_ply(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.points.len() * 48);
        write!(
            out,
            "ply\nformat ascii 1.0\nelement vertex {}\n\
             property double x\nproperty double y\nproperty double z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\n\
             property uint instance_id\nproperty float confidence\nend_header\n",
            self.points.len()
        )
        .unwrap();
        for p in &self.points {
            let [r, g, b] = instance_color(p.instance_id);
            writeln!(
                out,
                "{} {} {} {r} {g} {b} {} {}",
                p.x, p.y, p.z, p.instance_id, p.confidence
            )
            .unwrap();
        }
        out
    }
}

pub fn write_labeled_points(points: &LabeledPointSet, path: &Path, format: PointFormat) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let bytes = match format {
        PointFormat::Binary => points.to_binary(),
        PointFormat::ColoredPly => points.to_ply(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_labeled_points(path: &Path) -> Result<LabeledPointSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    LabeledPointSet::from_binary(&bytes)
}

/// Deterministic color for an instance id: the hue advances by the golden
/// ratio conjugate per id (saturation 0.65, value 0.95), so consecutive ids
/// land far apart on the color wheel.
pub fn instance_color(id: u32) -> [u8; 3] {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    let h = (id as f64 * GOLDEN).fract() * 6.0;
    let (s, v) = (0.65, 0.95);
    let i = h.floor();
    let f = h - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match i as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn pt(x: f64, id: u32) -> LabeledPoint {
        LabeledPoint { x, y: -x, z: 2.0 * x, instance_id: id, confidence: 0.25 }
    }

    #[test]
    fn single_point_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.glpt");
        let set = LabeledPointSet::new(vec![LabeledPoint {
            x: 0.0, y: 0.0, z: 0.0, instance_id: 0, confidence: 1.0,
        }]);
        write_labeled_points(&set, &p, PointFormat::Binary).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"GLPT");
        assert_eq!(bytes.len(), 8 + 32);
        assert_eq!(read_labeled_points(&p).unwrap(), set);
    }

    #[test]
    fn ply_colors_per_instance() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ply");
        let set = LabeledPointSet::new(vec![pt(0.0, 3), pt(1.0, 9), pt(2.0, 3)]);
        write_labeled_points(&set, &p, PointFormat::ColoredPly).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let body = text.split("end_header\n").nth(1).unwrap();
        let colors: BTreeSet<(String, String, String)> = body
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split(' ').collect();
                (f[3].to_string(), f[4].to_string(), f[5].to_string())
            })
            .collect();
        assert_eq!(colors.len(), 2);
    }

    #[test]
    fn palette_is_stable_and_distinct_for_small_ids() {
        assert_eq!(instance_color(7), instance_color(7));
        let distinct: BTreeSet<[u8; 3]> = (0..64).map(instance_color).collect();
        assert_eq!(distinct.len(), 64);
    }

    #[test]
    fn empty_set_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = write_labeled_points(&LabeledPointSet::default(), &dir.path().join("x"), PointFormat::Binary);
        assert!(matches!(r, Err(Error::EmptyLabels)));
    }

    #[test]
    fn truncated_file_rejected() {
        let set = LabeledPointSet::new(vec![pt(1.0, 1)]);
        let mut bytes = set.to_binary();
        bytes.pop();
        assert!(LabeledPointSet::from_binary(&bytes).is_err());
    }
}
