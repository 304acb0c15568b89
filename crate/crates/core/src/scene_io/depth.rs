use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Raw depth raster in sensor units. A value of 0 marks a pixel without a
/// depth return and must never be converted to meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u16>,
    /// Meters per unit.
    pub scale: f64,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<u16>, scale: f64) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::LengthMismatch(
                values.len(),
                width as usize * height as usize,
            ));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvariantViolation(format!("depth scale {scale} must be > 0")));
        }
        Ok(DepthMap {
            width,
            height,
            values,
            scale,
        })
    }

    #[inline]
    pub fn raw(&self, x: u32, y: u32) -> u16 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Depth in meters, or `None` for an invalid (zero) sample.
    #[inline]
    pub fn meters(&self, x: u32, y: u32) -> Option<f64> {
        match self.raw(x, y) {
            0 => None,
            d => Some(d as f64 * self.scale),
        }
    }

    /// Reads a raw little-endian u16 raster.
    pub fn read(path: &Path, width: u32, height: u32, scale: f64) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let expected = width as usize * height as usize * 2;
        if bytes.len() != expected {
            return Err(Error::schema(
                path.display().to_string(),
                format!("depth raster has {} bytes, expected {expected}", bytes.len()),
            ));
        }
        let values = bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        DepthMap::new(width, height, values, scale)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.values.len() * 2);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}
