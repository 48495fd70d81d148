//! Overlap and surface-distance metrics between binary masks, and keypoint
//! projection error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AffineTransform, Point};
use crate::raster::BinaryMask;

fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize)> {
    if !a.same_size(b) {
        return Err(Error::Size(format!(
            "mask sizes differ: {}×{} vs {}×{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (mut na, mut nb, mut both) = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na == 0 && nb == 0 {
        return Err(Error::UndefinedMetric("both masks are empty".into()));
    }
    Ok((na, nb, both))
}

/// `2|a∩b| / (|a| + |b|)`.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (na, nb, both) = overlap_counts(a, b)?;
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// `|a∩b| / |a∪b|`.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (na, nb, both) = overlap_counts(a, b)?;
    Ok(both as f64 / (na + nb - both) as f64)
}

/// Foreground pixels with at least one background 4-neighbor; the canvas
/// border counts as background.
pub fn boundary_points(mask: &BinaryMask) -> Result<Vec<Point>> {
    let mut out = Vec::new();
    for (x, y) in mask.foreground() {
        let (xi, yi) = (x as i64, y as i64);
        if !mask.get_signed(xi - 1, yi)
            || !mask.get_signed(xi + 1, yi)
            || !mask.get_signed(xi, yi - 1)
            || !mask.get_signed(xi, yi + 1)
        {
            out.push(Point::new(x as f64, y as f64));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(out)
}

/// Uniform-grid index answering exact nearest-neighbor distance queries.
struct NearestIndex<'a> {
    points: &'a [Point],
    cell: f64,
    origin: (f64, f64),
    dims: (usize, usize),
    buckets: Vec<Vec<u32>>,
}

impl<'a> NearestIndex<'a> {
    fn new(points: &'a [Point]) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let area = ((x1 - x0).max(1.0)) * ((y1 - y0).max(1.0));
        // roughly two points per cell
        let cell = (2.0 * area / points.len() as f64).sqrt().max(1.0);
        let dims = (
            ((x1 - x0) / cell).floor() as usize + 1,
            ((y1 - y0) / cell).floor() as usize + 1,
        );
        let mut buckets = vec![Vec::new(); dims.0 * dims.1];
        for (i, p) in points.iter().enumerate() {
            let cx = ((p.x - x0) / cell).floor() as usize;
            let cy = ((p.y - y0) / cell).floor() as usize;
            buckets[cy * dims.0 + cx].push(i as u32);
        }
        Self {
            points,
            cell,
            origin: (x0, y0),
            dims,
            buckets,
        }
    }

    fn nearest_distance(&self, q: Point) -> f64 {
        let (w, h) = (self.dims.0 as i64, self.dims.1 as i64);
        let qx = ((q.x - self.origin.0) / self.cell).floor() as i64;
        let qy = ((q.y - self.origin.1) / self.cell).floor() as i64;
        // Distance from q to the grid's bounding cells, so rings that are
        // empty because q lies far outside still terminate.
        let gap_x = (-qx).max(qx - (w - 1)).max(0);
        let gap_y = (-qy).max(qy - (h - 1)).max(0);
        let start = gap_x.max(gap_y);
        let mut best = f64::INFINITY;
        let max_ring = start + w.max(h) + 1;
        for ring in start..=max_ring {
            // Anything in ring `ring + 1` or beyond is at least `ring·cell` away.
            if best <= (ring - 1).max(0) as f64 * self.cell && ring > start {
                break;
            }
            for cy in (qy - ring).max(0)..=(qy + ring).min(h - 1) {
                for cx in (qx - ring).max(0)..=(qx + ring).min(w - 1) {
                    if (cx - qx).abs() != ring && (cy - qy).abs() != ring {
                        continue;
                    }
                    for &i in &self.buckets[(cy * w + cx) as usize] {
                        best = best.min(self.points[i as usize].distance(&q));
                    }
                }
            }
        }
        best
    }
}

/// `d(p, B)` for every `p ∈ A`.
fn directed_distances(a: &[Point], b: &[Point]) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let index = NearestIndex::new(b);
    Ok(a.iter().map(|p| index.nearest_distance(*p)).collect())
}

pub fn hausdorff(a: &[Point], b: &[Point]) -> Result<f64> {
    let ab = directed_distances(a, b)?;
    let ba = directed_distances(b, a)?;
    Ok(ab.into_iter().chain(ba).fold(0.0, f64::max))
}

/// Mean over `p ∈ A` of `d(p, B)`. `A` is the registered surface and `B`
/// the fixed one.
pub fn asd(a: &[Point], b: &[Point]) -> Result<f64> {
    let ab = directed_distances(a, b)?;
    Ok(ab.iter().sum::<f64>() / ab.len() as f64)
}

pub fn assd(a: &[Point], b: &[Point]) -> Result<f64> {
    let ab = directed_distances(a, b)?;
    let ba = directed_distances(b, a)?;
    Ok((ab.iter().sum::<f64>() + ba.iter().sum::<f64>()) / (ab.len() + ba.len()) as f64)
}

/// Projects each moving keypoint through `transform` and measures the
/// distance to its paired ground-truth fixed point.
pub fn keypoint_ed(transform: &AffineTransform, moving: &[Point], fixed_truth: &[Point]) -> Result<(Vec<f64>, f64)> {
    if moving.len() != fixed_truth.len() {
        return Err(Error::Matching(format!(
            "keypoint counts differ: {} moving vs {} fixed",
            moving.len(),
            fixed_truth.len()
        )));
    }
    if moving.is_empty() {
        return Err(Error::EmptySet);
    }
    let d: Vec<f64> = moving
        .iter()
        .zip(fixed_truth)
        .map(|(m, f)| transform.apply(*m).distance(f))
        .collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    Ok((d, mean))
}

/// Overlap and surface metrics of a registered mask against the fixed mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub dice: f64,
    pub jaccard: f64,
    pub hausdorff: f64,
    /// Registered surface → fixed surface.
    pub asd: f64,
    pub assd: f64,
}

pub fn mask_metrics(fixed: &BinaryMask, registered: &BinaryMask) -> Result<MaskMetrics> {
    let dice = dice(registered, fixed)?;
    let jaccard = jaccard(registered, fixed)?;
    let a = boundary_points(registered)?;
    let b = boundary_points(fixed)?;
    Ok(MaskMetrics {
        dice,
        jaccard,
        hausdorff: hausdorff(&a, &b)?,
        asd: asd(&a, &b)?,
        assd: assd(&a, &b)?,
    })
}

/// Metrics of one registration run, with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub dice: f64,
    pub jaccard: f64,
    pub hausdorff: f64,
    pub asd: f64,
    pub assd: f64,
    pub asd_direction: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub keypoint_ed_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub keypoint_ed: Option<Vec<f64>>,
    pub fid: Option<f64>,
    pub parameters: serde_json::Value,
}

impl RegistrationReport {
    pub fn new(m: MaskMetrics, parameters: serde_json::Value) -> Self {
        Self {
            dice: m.dice,
            jaccard: m.jaccard,
            hausdorff: m.hausdorff,
            asd: m.asd,
            assd: m.assd,
            asd_direction: "registered_to_fixed".into(),
            keypoint_ed_mean: None,
            keypoint_ed: None,
            fid: None,
            parameters,
        }
    }
}
