//! Principal direction of a limb mask, either by exhaustive projection
//! extent or by the minimum-area enclosing rectangle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross, Point};
use crate::raster::{rotate_image, BinaryMask};

/// Default angular step of the exhaustive search, in degrees.
pub const DEFAULT_STEP: f64 = 1.0;

const EXTENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationMethod {
    Exhaustive,
    MinRect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrincipalDirection {
    /// Degrees in `[0, 180)`.
    pub angle: f64,
    pub method: OrientationMethod,
    /// Length of the projection segment (exhaustive) or the longer rectangle
    /// side (min-rect), in pixels.
    pub extent: f64,
}

/// Tries every angle `0, step, 2·step, … < 180` and keeps the one whose
/// projection segment `|AB|` is longest.
pub fn principal_direction_exhaustive(mask: &BinaryMask, step: f64) -> Result<PrincipalDirection> {
    if !(step > 0.0 && step <= 5.0) {
        return Err(Error::param("step", format!("must lie in (0, 5], got {step}")));
    }
    let points: Vec<(f64, f64)> = mask.foreground().map(|(x, y)| (x as f64, y as f64)).collect();
    if points.is_empty() {
        return Err(Error::EmptyMask);
    }
    // Shift used for axes past 90° so every projection lands on the
    // non-negative half of the axis.
    let shift = mask.width() as f64;

    let mut best: Option<(f64, f64)> = None;
    let mut k = 0u32;
    loop {
        let theta = k as f64 * step;
        if theta >= 180.0 {
            break;
        }
        k += 1;
        let extent = projection_extent(&points, theta, shift);
        if best.is_none_or(|(_, e)| extent > e + EXTENT_EPS) {
            best = Some((theta, extent));
        }
    }
    let (angle, extent) = best.expect("at least one candidate angle");
    Ok(PrincipalDirection {
        angle,
        method: OrientationMethod::Exhaustive,
        extent,
    })
}

/// `max|P_r| − min|P_r|` for the axis through the origin at `theta_deg`.
fn projection_extent(points: &[(f64, f64)], theta_deg: f64, shift: f64) -> f64 {
    let (lo, hi) = if theta_deg == 90.0 {
        points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)))
    } else {
        let (s, c) = theta_deg.to_radians().sin_cos();
        let dx = if theta_deg > 90.0 { -shift } else { 0.0 };
        points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| {
            let r = ((x + dx) * c + y * s).abs();
            (lo.min(r), hi.max(r))
        })
    };
    hi - lo
}

/// Andrew's monotone chain. Returns the hull counter-clockwise in a y-up
/// sense without repeated or collinear vertices.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Outline points of a mask: for each row the leftmost and rightmost
/// foreground pixel. The hull of these equals the hull of all pixels.
fn row_extremes(mask: &BinaryMask) -> Vec<Point> {
    let mut out = Vec::new();
    for y in 0..mask.height() {
        let row = &mask.data()[y * mask.width()..(y + 1) * mask.width()];
        if let (Some(l), Some(r)) = (row.iter().position(|&v| v), row.iter().rposition(|&v| v)) {
            out.push(Point::new(l as f64, y as f64));
            if r != l {
                out.push(Point::new(r as f64, y as f64));
            }
        }
    }
    out
}

/// Minimum-area enclosing rectangle of a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinAreaRect {
    pub area: f64,
    /// Angle of the longer side in `[0, 180)`.
    pub angle: f64,
    pub long_side: f64,
    pub short_side: f64,
}

/// Rotating calipers over the hull edges.
pub fn min_area_rect(points: &[Point]) -> Result<MinAreaRect> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(Error::DegenerateGeometry(
            "need at least 3 non-collinear foreground pixels".into(),
        ));
    }
    let n = hull.len();
    let mut best: Option<MinAreaRect> = None;
    for i in 0..n {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        let len = a.distance(&b);
        let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let (dx, dy) = (p.x - a.x, p.y - a.y);
            let u = dx * ux + dy * uy;
            let v = -dx * uy + dy * ux;
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        let (along, across) = (umax - umin, vmax - vmin);
        let edge_angle = normalize_angle(uy.atan2(ux).to_degrees());
        let normal_angle = normalize_angle(edge_angle + 90.0);
        let (long_side, short_side, angle) = if (along - across).abs() <= EXTENT_EPS * along.max(1.0) {
            (along, across, edge_angle.min(normal_angle))
        } else if along > across {
            (along, across, edge_angle)
        } else {
            (across, along, normal_angle)
        };
        let cand = MinAreaRect {
            area: along * across,
            angle,
            long_side,
            short_side,
        };
        let better = match best {
            None => true,
            Some(b) => {
                let tol = 1e-9 * b.area.max(1.0);
                cand.area < b.area - tol || ((cand.area - b.area).abs() <= tol && cand.angle < b.angle)
            }
        };
        if better {
            best = Some(cand);
        }
    }
    Ok(best.expect("hull has edges"))
}

/// Maps any angle into `[0, 180)`, snapping values within 1e-9 of 180 to 0.
pub fn normalize_angle(deg: f64) -> f64 {
    let a = deg.rem_euclid(180.0);
    if (180.0 - a) < 1e-9 || a < 1e-9 {
        0.0
    } else {
        a
    }
}

/// Angle of the longer side of the minimum-area enclosing rectangle of the
/// foreground pixel centers.
pub fn min_rect_direction(mask: &BinaryMask) -> Result<PrincipalDirection> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let rect = min_area_rect(&row_extremes(mask))?;
    Ok(PrincipalDirection {
        angle: rect.angle,
        method: OrientationMethod::MinRect,
        extent: rect.long_side,
    })
}

pub fn principal_direction(mask: &BinaryMask, method: OrientationMethod, step: f64) -> Result<PrincipalDirection> {
    match method {
        OrientationMethod::Exhaustive => principal_direction_exhaustive(mask, step),
        OrientationMethod::MinRect => min_rect_direction(mask),
    }
}

/// Rotates the mask so its principal direction lies along +x.
pub fn normalize_horizontal(mask: &BinaryMask, dir: &PrincipalDirection) -> BinaryMask {
    rotate_image(mask, dir.angle)
}

/// Angular distance to the nearest of 0° / 180°.
pub fn deviation_from_horizontal(angle: f64) -> f64 {
    let a = angle.rem_euclid(180.0);
    a.min(180.0 - a)
}
