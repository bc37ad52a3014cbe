use std::ops::Mul;

use crate::error::{Error, Result};

/// Tolerance used when checking the rotation-and-uniform-scale structure.
pub const STRUCTURE_TOLERANCE: f64 = 1e-9;

/// A 2-D similarity (translation, rotation, uniform scale) stored as a
/// homogeneous 3x3 matrix:
///
/// ```text
/// | a  -b  tx |
/// | b   a  ty |      a = s cos(theta), b = s sin(theta)
/// | 0   0   1 |
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    m: [[f64; 3]; 3],
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub const fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub const fn from_translation(tx: f64, ty: f64) -> Self {
        Self {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    /// `a = s cos(theta)`, `b = s sin(theta)`.
    pub fn from_components(a: f64, b: f64, tx: f64, ty: f64) -> Result<Self> {
        let t = Self {
            m: [[a, -b, tx], [b, a, ty], [0.0, 0.0, 1.0]],
        };
        t.check_invertible()?;
        Ok(t)
    }

    pub fn from_params(scale: f64, theta: f64, tx: f64, ty: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("scale must be positive, got {scale}")));
        }
        let (sin, cos) = theta.sin_cos();
        Self::from_components(scale * cos, scale * sin, tx, ty)
    }

    /// Accepts a general 3x3 matrix only if it has similarity structure
    /// (within [`STRUCTURE_TOLERANCE`]) and a positive determinant.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        if !is_similarity_matrix(&m) {
            return Err(Error::invalid(format!(
                "matrix is not a rotation + uniform scale + translation: {m:?}"
            )));
        }
        let t = Self { m };
        t.check_invertible()?;
        Ok(t)
    }

    fn check_invertible(&self) -> Result<()> {
        let det = self.det2();
        if !(det > 0.0 && det.is_finite()) || self.m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "similarity is not invertible (det {det})"
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    fn det2(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn scale(&self) -> f64 {
        self.m[0][0].hypot(self.m[1][0])
    }

    /// Rotation angle in radians.
    pub fn rotation(&self) -> f64 {
        self.m[1][0].atan2(self.m[0][0])
    }

    pub fn translation(&self) -> (f64, f64) {
        (self.m[0][2], self.m[1][2])
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    /// Matrix product `self * rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &Self) -> Self {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * rhs.m[k][j]).sum();
            }
        }
        Self { m: out }
    }

    pub fn try_inverse(&self) -> Result<Self> {
        self.check_invertible()?;
        let (a, b) = (self.m[0][0], self.m[1][0]);
        let (tx, ty) = self.translation();
        let s2 = a * a + b * b;
        let (ia, ib) = (a / s2, -b / s2);
        Ok(Self {
            m: [
                [ia, -ib, -(ia * tx - ib * ty)],
                [ib, ia, -(ib * tx + ia * ty)],
                [0.0, 0.0, 1.0],
            ],
        })
    }

    pub fn inverse(&self) -> Self {
        self.try_inverse()
            .expect("validated similarity transforms are invertible")
    }
}

impl Mul for SimilarityTransform {
    type Output = SimilarityTransform;

    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

impl Mul for &SimilarityTransform {
    type Output = SimilarityTransform;

    fn mul(self, rhs: Self) -> SimilarityTransform {
        self.compose(rhs)
    }
}

/// True when the upper-left block is `s * R` and the last row is `[0 0 1]`,
/// both within [`STRUCTURE_TOLERANCE`].
pub fn is_similarity_matrix(m: &[[f64; 3]; 3]) -> bool {
    let tol = STRUCTURE_TOLERANCE;
    (m[0][0] - m[1][1]).abs() <= tol
        && (m[0][1] + m[1][0]).abs() <= tol
        && m[2][0].abs() <= tol
        && m[2][1].abs() <= tol
        && (m[2][2] - 1.0).abs() <= tol
}
