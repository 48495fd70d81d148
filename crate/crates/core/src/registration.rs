//! Structural matching, affine estimation (optionally RANSAC), thin-plate
//! splines and backward warping.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffrc::KeypointSet;
use crate::geometry::{spans_plane, AffineTransform, BackwardMap, Point, MIN_DETERMINANT};
use crate::raster::{BinaryMask, Image, Resample};

/// Inlier distance used when RANSAC is requested without a threshold.
pub const DEFAULT_RANSAC_THRESHOLD: f64 = 4.0;
pub const DEFAULT_RANSAC_ITERATIONS: usize = 500;
pub const DEFAULT_RANSAC_SEED: u64 = 0x5eed_f00d;

/// Index-wise correspondences: `fixed[i]` pairs with `moving[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPairs {
    pub fixed: Vec<Point>,
    pub moving: Vec<Point>,
}

impl MatchedPairs {
    pub fn new(fixed: Vec<Point>, moving: Vec<Point>) -> Result<Self> {
        if fixed.len() != moving.len() {
            return Err(Error::Matching(format!(
                "point counts differ: {} fixed vs {} moving",
                fixed.len(),
                moving.len()
            )));
        }
        Ok(Self { fixed, moving })
    }

    pub fn count(&self) -> usize {
        self.fixed.len()
    }

    fn subset(&self, idx: &[usize]) -> MatchedPairs {
        MatchedPairs {
            fixed: idx.iter().map(|&i| self.fixed[i]).collect(),
            moving: idx.iter().map(|&i| self.moving[i]).collect(),
        }
    }
}

/// Pairs two keypoint sets that share the distal→wrist, upper/lower order.
pub fn match_structural(fixed: &KeypointSet, moving: &KeypointSet) -> Result<MatchedPairs> {
    MatchedPairs::new(fixed.points.clone(), moving.points.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_RANSAC_THRESHOLD,
            iterations: DEFAULT_RANSAC_ITERATIONS,
            seed: DEFAULT_RANSAC_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineEstimate {
    /// Maps moving coordinates onto fixed coordinates.
    pub transform: AffineTransform,
    /// Per-pair inlier flag; all `true` without RANSAC.
    pub inliers: Vec<bool>,
}

/// Least-squares affine `H` minimizing `Σ‖H·moving_i − fixed_i‖²`.
pub fn fit_affine_lstsq(pairs: &MatchedPairs) -> Result<AffineTransform> {
    let n = pairs.count();
    if n < 3 {
        return Err(Error::DegenerateConfiguration(format!("need ≥ 3 pairs, got {n}")));
    }
    if !spans_plane(&pairs.moving) {
        return Err(Error::DegenerateConfiguration("moving points are collinear".into()));
    }
    // Centering keeps the design matrix well conditioned for pixel-scale
    // coordinates.
    let centroid = |pts: &[Point]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / n as f64, sy / n as f64)
    };
    let (cm, cf) = (centroid(&pairs.moving), centroid(&pairs.fixed));
    let design = DMatrix::from_fn(n, 2, |r, c| {
        let p = pairs.moving[r];
        if c == 0 {
            p.x - cm.x
        } else {
            p.y - cm.y
        }
    });
    let rhs = DMatrix::from_fn(n, 2, |r, c| {
        let p = pairs.fixed[r];
        if c == 0 {
            p.x - cf.x
        } else {
            p.y - cf.y
        }
    });
    let svd = design.svd(true, true);
    let sol = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::DegenerateConfiguration(e.to_string()))?;
    // sol is 2×2 with column k giving the coefficients for output k.
    let (a, b, c, d) = (sol[(0, 0)], sol[(1, 0)], sol[(0, 1)], sol[(1, 1)]);
    let t = AffineTransform::new([
        [a, b, cf.x - a * cm.x - b * cm.y],
        [c, d, cf.y - c * cm.x - d * cm.y],
    ]);
    if !t.is_finite() || t.determinant().abs() <= MIN_DETERMINANT {
        return Err(Error::DegenerateConfiguration("fitted affine is degenerate".into()));
    }
    Ok(t)
}

/// Exact affine through three pairs, or `None` for a collinear triple.
fn affine_from_three(moving: [Point; 3], fixed: [Point; 3]) -> Option<AffineTransform> {
    let m = Matrix3::from_fn(|r, c| match c {
        0 => moving[r].x,
        1 => moving[r].y,
        _ => 1.0,
    });
    let lu = m.lu();
    let xs = lu.solve(&Vector3::new(fixed[0].x, fixed[1].x, fixed[2].x))?;
    let ys = lu.solve(&Vector3::new(fixed[0].y, fixed[1].y, fixed[2].y))?;
    let t = AffineTransform::new([[xs[0], xs[1], xs[2]], [ys[0], ys[1], ys[2]]]);
    (t.is_finite() && t.determinant().abs() > MIN_DETERMINANT).then_some(t)
}

/// Affine from matched pairs. With `ransac`, 3-pair hypotheses are scored
/// by inlier count and the best inlier set is refit by least squares.
pub fn estimate_affine(pairs: &MatchedPairs, ransac: Option<&RansacParams>) -> Result<AffineEstimate> {
    let n = pairs.count();
    let Some(params) = ransac else {
        return Ok(AffineEstimate {
            transform: fit_affine_lstsq(pairs)?,
            inliers: vec![true; n],
        });
    };
    if n < 3 {
        return Err(Error::DegenerateConfiguration(format!("need ≥ 3 pairs, got {n}")));
    }
    if !(params.threshold.is_finite() && params.threshold > 0.0) {
        return Err(Error::param("ransac_threshold", "must be finite and > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<Vec<bool>> = None;
    let mut best_count = 0;
    for _ in 0..params.iterations.max(1) {
        let idx = sample(&mut rng, n, 3).into_vec();
        let Some(h) = affine_from_three(
            [pairs.moving[idx[0]], pairs.moving[idx[1]], pairs.moving[idx[2]]],
            [pairs.fixed[idx[0]], pairs.fixed[idx[1]], pairs.fixed[idx[2]]],
        ) else {
            continue;
        };
        let inliers: Vec<bool> = pairs
            .moving
            .iter()
            .zip(&pairs.fixed)
            .map(|(m, f)| h.apply(*m).distance(f) <= params.threshold)
            .collect();
        let count = inliers.iter().filter(|&&v| v).count();
        if count > best_count {
            best_count = count;
            best = Some(inliers);
            if count == n {
                break;
            }
        }
    }
    let inliers = best.ok_or_else(|| Error::DegenerateConfiguration("no non-degenerate RANSAC sample".into()))?;
    let keep: Vec<usize> = (0..n).filter(|&i| inliers[i]).collect();
    let transform = fit_affine_lstsq(&pairs.subset(&keep))?;
    Ok(AffineEstimate { transform, inliers })
}

/// Thin-plate radial basis `U(r) = r² ln r`, `U(0) = 0`.
pub fn tps_kernel(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

/// Thin-plate spline mapping fixed-image coordinates to moving-image
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsWarp {
    pub control_points: Vec<Point>,
    pub affine_part: AffineTransform,
    /// One `[wx, wy]` per control point.
    pub weights: Vec<[f64; 2]>,
    pub regularization_lambda: f64,
}

impl TpsWarp {
    pub fn eval(&self, p: Point) -> Point {
        let base = self.affine_part.apply(p);
        let (mut dx, mut dy) = (0.0, 0.0);
        for (c, w) in self.control_points.iter().zip(&self.weights) {
            let r2 = (p.x - c.x).powi(2) + (p.y - c.y).powi(2);
            // r² ln r = ½ r² ln r²
            let u = if r2 > 0.0 { 0.5 * r2 * r2.ln() } else { 0.0 };
            dx += w[0] * u;
            dy += w[1] * u;
        }
        Point::new(base.x + dx, base.y + dy)
    }

    /// `Σ_k w_kᵀ K w_k` over both output coordinates.
    pub fn bending_energy(&self) -> f64 {
        let mut e = 0.0;
        for (i, ci) in self.control_points.iter().enumerate() {
            for (j, cj) in self.control_points.iter().enumerate() {
                let k = tps_kernel(ci.distance(cj));
                e += k * (self.weights[i][0] * self.weights[j][0] + self.weights[i][1] * self.weights[j][1]);
            }
        }
        e
    }

    /// `[Σw, Σw·x, Σw·y]` per output coordinate; all zero for a valid fit.
    pub fn side_conditions(&self) -> [[f64; 3]; 2] {
        let mut out = [[0.0; 3]; 2];
        for (c, w) in self.control_points.iter().zip(&self.weights) {
            for k in 0..2 {
                out[k][0] += w[k];
                out[k][1] += w[k] * c.x;
                out[k][2] += w[k] * c.y;
            }
        }
        out
    }
}

impl BackwardMap for TpsWarp {
    fn source_of(&self, p: Point) -> Point {
        self.eval(p)
    }
}

/// Solves `[[K + λI, P], [Pᵀ, 0]] [w; a] = [v; 0]` with controls at the
/// fixed points and targets at the moving points.
pub fn tps_fit(pairs: &MatchedPairs, lambda: f64) -> Result<TpsWarp> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::param("tps_lambda", format!("must be finite and ≥ 0, got {lambda}")));
    }
    let n = pairs.count();
    if n < 3 {
        return Err(Error::DegenerateConfiguration(format!("need ≥ 3 pairs, got {n}")));
    }
    let controls = &pairs.fixed;
    for i in 0..n {
        for j in 0..i {
            if controls[i] == controls[j] {
                return Err(Error::DuplicatePoint {
                    x: controls[i].x,
                    y: controls[i].y,
                });
            }
        }
    }
    if !spans_plane(controls) {
        return Err(Error::SingularSystem("control points are collinear".into()));
    }
    let (sx, sy) = controls.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    let center = Point::new(sx / n as f64, sy / n as f64);

    let size = n + 3;
    let mut a = DMatrix::<f64>::zeros(size, size);
    let mut b = DMatrix::<f64>::zeros(size, 2);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = tps_kernel(controls[i].distance(&controls[j]));
        }
        a[(i, i)] += lambda;
        let (qx, qy) = (controls[i].x - center.x, controls[i].y - center.y);
        for (k, v) in [1.0, qx, qy].into_iter().enumerate() {
            a[(i, n + k)] = v;
            a[(n + k, i)] = v;
        }
        b[(i, 0)] = pairs.moving[i].x;
        b[(i, 1)] = pairs.moving[i].y;
    }
    let sol = a
        .full_piv_lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("TPS system has no unique solution".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("TPS solution is not finite".into()));
    }
    let weights = (0..n).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect();
    let row = |k: usize| {
        let (c0, cx, cy) = (sol[(n, k)], sol[(n + 1, k)], sol[(n + 2, k)]);
        [cx, cy, c0 - cx * center.x - cy * center.y]
    };
    Ok(TpsWarp {
        control_points: controls.clone(),
        affine_part: AffineTransform::new([row(0), row(1)]),
        weights,
        regularization_lambda: lambda,
    })
}

/// A registration transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warp {
    /// Maps moving → fixed; warping inverts it.
    Affine(AffineTransform),
    /// Maps fixed → moving; used directly as the backward map.
    Tps(TpsWarp),
}

/// Resamples `source` (in moving coordinates) onto a fixed-frame canvas.
pub fn warp_image<R: Resample>(source: &R, warp: &Warp, output_size: (usize, usize)) -> Result<R> {
    let (w, h) = output_size;
    if w == 0 || h == 0 {
        return Err(Error::Size("output size must be positive".into()));
    }
    match warp {
        Warp::Affine(t) => {
            let inv = t.inverse()?;
            Ok(source.resample(w, h, &inv))
        }
        Warp::Tps(tps) => Ok(source.resample(w, h, tps)),
    }
}

/// Backward map tabulated at every output pixel.
struct SampledMap {
    width: usize,
    sources: Vec<Point>,
}

impl BackwardMap for SampledMap {
    fn source_of(&self, p: Point) -> Point {
        self.sources[p.y as usize * self.width + p.x as usize]
    }
}

/// Warps an image and its mask through the same map, evaluating a spline
/// only once per output pixel.
pub fn warp_image_and_mask(
    image: &Image,
    mask: &BinaryMask,
    warp: &Warp,
    output_size: (usize, usize),
) -> Result<(Image, BinaryMask)> {
    match warp {
        Warp::Affine(_) => Ok((warp_image(image, warp, output_size)?, warp_image(mask, warp, output_size)?)),
        Warp::Tps(tps) => {
            let (w, h) = output_size;
            if w == 0 || h == 0 {
                return Err(Error::Size("output size must be positive".into()));
            }
            let mut sources = vec![Point::new(0.0, 0.0); w * h];
            sources.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
                for (x, s) in row.iter_mut().enumerate() {
                    *s = tps.eval(Point::new(x as f64, y as f64));
                }
            });
            let map = SampledMap { width: w, sources };
            Ok((image.resample(w, h, &map), mask.resample(w, h, &map)))
        }
    }
}

/// Per-pixel `w_fixed·fixed + w_moving·moving`, rounded and clamped.
pub fn blend_overlay(fixed: &Image, moving: &Image, w_fixed: f64, w_moving: f64) -> Result<Image> {
    if fixed.width() != moving.width() || fixed.height() != moving.height() || fixed.channels() != moving.channels() {
        return Err(Error::Size(format!(
            "overlay inputs differ: {}×{}×{} vs {}×{}×{}",
            fixed.width(),
            fixed.height(),
            fixed.channels(),
            moving.width(),
            moving.height(),
            moving.channels()
        )));
    }
    let data = fixed
        .data()
        .iter()
        .zip(moving.data())
        .map(|(&f, &m)| (w_fixed * f as f64 + w_moving * m as f64).round().clamp(0.0, 255.0) as u8)
        .collect();
    Image::new(fixed.width(), fixed.height(), fixed.channels(), data)
}
