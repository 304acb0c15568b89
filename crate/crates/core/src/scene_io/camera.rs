use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvariantViolation(format!(
                "intrinsics require finite values and fx, fy > 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Projects a camera-frame point to pixel coordinates and depth.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64, f64) {
        let u = self.fx * p[0] / p[2] + self.cx;
        let v = self.fy * p[1] / p[2] + self.cy;
        (u, v, p[2])
    }
}

pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

/// Row-major 4x4 rigid transform, camera to world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose4x4(pub [f64; 16]);

impl Pose4x4 {
    pub const IDENTITY: Pose4x4 = Pose4x4([
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    ]);

    pub fn from_rotation_translation(r: [[f64; 3]; 3], t: [f64; 3]) -> Self {
        Pose4x4([
            r[0][0], r[0][1], r[0][2], t[0], //
            r[1][0], r[1][1], r[1][2], t[1], //
            r[2][0], r[2][1], r[2][2], t[2], //
            0.0, 0.0, 0.0, 1.0,
        ])
    }

    pub fn translation(t: [f64; 3]) -> Self {
        let mut m = Self::IDENTITY;
        m.0[3] = t[0];
        m.0[7] = t[1];
        m.0[11] = t[2];
        m
    }

    /// Camera at `eye` looking toward `target`; camera +Z is the viewing
    /// direction, +Y points down in the image.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Self {
        let z = normalize(sub(target, eye));
        let x = normalize(cross(z, up));
        let y = cross(z, x);
        // Columns of R are the camera axes expressed in world coordinates.
        Self::from_rotation_translation(
            [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]],
            eye,
        )
    }

    #[inline]
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]
    }

    #[inline]
    pub fn translation_part(&self) -> [f64; 3] {
        [self.0[3], self.0[7], self.0[11]]
    }

    #[inline]
    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11],
        ]
    }

    #[inline]
    pub fn rotate(&self, d: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0] * d[0] + m[1] * d[1] + m[2] * d[2],
            m[4] * d[0] + m[5] * d[1] + m[6] * d[2],
            m[8] * d[0] + m[9] * d[1] + m[10] * d[2],
        ]
    }

    /// Rigid inverse: R^T, -R^T t.
    pub fn inverse_rigid(&self) -> Self {
        let r = self.rotation();
        let t = self.translation_part();
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let ti = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        Self::from_rotation_translation(rt, ti)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation("pose has non-finite entries".into()));
        }
        if self.0[12..] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvariantViolation(format!(
                "pose bottom row must be (0,0,0,1), got {:?}",
                &self.0[12..]
            )));
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > ORTHONORMAL_TOLERANCE {
                    return Err(Error::InvariantViolation(format!(
                        "pose rotation is not orthonormal (R^T R [{i}][{j}] = {dot})"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Default for Pose4x4 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}
