//! Planar points and 2×3 affine maps in pixel coordinates.
//!
//! Pixel `(x, y)` has its center at integer coordinates `(x, y)`; `x` grows
//! to the right and `y` grows downwards. Angles are measured in that frame,
//! so a direction at angle `θ` is `(cos θ, sin θ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Minimum |det| of the linear part for an affine map to count as invertible.
pub const MIN_DETERMINANT: f64 = 1e-8;

/// `(x, y, 1) ↦ (x', y')` with `x' = m[0][0]·x + m[0][1]·y + m[0][2]` and
/// `y' = m[1][0]·x + m[1][1]·y + m[1][2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub matrix: [[f64; 3]; 2],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn new(matrix: [[f64; 3]; 2]) -> Self {
        Self { matrix }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new([[1.0, 0.0, tx], [0.0, 1.0, ty]])
    }

    /// Rotation by `angle_deg` (positive turns +x toward +y) and uniform
    /// `scale` about `center`, followed by a translation of `(tx, ty)`.
    pub fn similarity_about(center: Point, angle_deg: f64, scale: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle_deg.to_radians().sin_cos();
        let (a, b) = (scale * c, scale * s);
        Self::new([
            [a, -b, center.x - a * center.x + b * center.y + tx],
            [b, a, center.y - b * center.x - a * center.y + ty],
        ])
    }

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.matrix;
        Point::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2],
        )
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().flatten().all(|v| v.is_finite())
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let det = self.determinant();
        if !self.is_finite() || !det.is_finite() || det.abs() <= MIN_DETERMINANT {
            return Err(Error::SingularTransform);
        }
        let m = &self.matrix;
        let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(AffineTransform::new([
            [ia, ib, -(ia * m[0][2] + ib * m[1][2])],
            [ic, id, -(ic * m[0][2] + id * m[1][2])],
        ]))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        let a = &self.matrix;
        let b = &other.matrix;
        let mut out = [[0.0; 3]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            row[0] = a[r][0] * b[0][0] + a[r][1] * b[1][0];
            row[1] = a[r][0] * b[0][1] + a[r][1] * b[1][1];
            row[2] = a[r][0] * b[0][2] + a[r][1] * b[1][2] + a[r][2];
        }
        AffineTransform::new(out)
    }

    pub fn max_abs_diff(&self, other: &AffineTransform) -> f64 {
        self.matrix
            .iter()
            .flatten()
            .zip(other.matrix.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Anything that maps an output pixel position to the position it should be
/// sampled from.
pub trait BackwardMap: Sync {
    fn source_of(&self, p: Point) -> Point;
}

impl BackwardMap for AffineTransform {
    fn source_of(&self, p: Point) -> Point {
        self.apply(p)
    }
}

/// Twice the signed area of triangle `abc`; positive when `c` lies to the
/// left of `a → b` in a y-up frame.
pub fn cross(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// True when the points span a 2-D region: the smaller singular value of the
/// centered coordinates is non-negligible against the larger one.
pub fn spans_plane(points: &[Point]) -> bool {
    if points.len() < 3 {
        return false;
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x / n, sy + p.y / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    if tr <= 0.0 {
        return false;
    }
    let det = sxx * syy - sxy * sxy;
    let disc = ((tr * tr) / 4.0 - det).max(0.0).sqrt();
    let lmax = tr / 2.0 + disc;
    let lmin = det / lmax;
    lmin > 1e-12 * lmax
}
