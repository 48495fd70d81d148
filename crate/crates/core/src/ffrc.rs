//! Forearm feature representation curve: per-column foreground counts of a
//! horizontal limb mask, Kalman smoothing, wrist valley scoring and edge
//! keypoint sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::raster::BinaryMask;

/// Default number of sampled columns (two keypoints each).
pub const DEFAULT_KEYPOINT_COLUMNS: usize = 10;

/// Minimum prominence for a valley candidate, in curve units.
pub const VALLEY_PROMINENCE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Raw,
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCurve {
    pub values: Vec<f64>,
    pub kind: CurveKind,
}

impl FeatureCurve {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            kind: CurveKind::Raw,
        }
    }

    pub fn filtered(values: Vec<f64>) -> Self {
        Self {
            values,
            kind: CurveKind::Filtered,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    pub process_noise_q: f64,
    pub measurement_noise_r: f64,
    pub initial_variance_p0: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            process_noise_q: 0.01,
            measurement_noise_r: 4.0,
            initial_variance_p0: 1.0,
        }
    }
}

impl KalmanParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("process_noise_q", self.process_noise_q),
            ("measurement_noise_r", self.measurement_noise_r),
            ("initial_variance_p0", self.initial_variance_p0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Keypoints in `(upper, lower)` pairs ordered from the distal column
/// towards the wrist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub points: Vec<Point>,
    pub wrist_x: f64,
    pub distal_x: f64,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `values[i]` = foreground pixels in column `i`.
pub fn compute_ffrc(mask: &BinaryMask) -> FeatureCurve {
    let mut counts = vec![0usize; mask.width()];
    for (x, _) in mask.foreground() {
        counts[x] += 1;
    }
    FeatureCurve::raw(counts.into_iter().map(|c| c as f64).collect())
}

/// Per-step state of the constant-velocity filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub value: f64,
    pub slope: f64,
    /// Covariance `[[p00, p01], [p10, p11]]`.
    pub covariance: [[f64; 2]; 2],
}

/// Forward constant-velocity Kalman pass over column index. State is
/// `(value, slope)` with transition `[[1, 1], [0, 1]]`, process noise `q·I`
/// and only the value observed. Returns the posterior state after each
/// sample.
pub fn kalman_states(values: &[f64], params: &KalmanParams) -> Result<Vec<KalmanState>> {
    params.validate()?;
    if values.len() < 2 {
        return Err(Error::param("curve", "needs at least two samples"));
    }
    let (q, r) = (params.process_noise_q, params.measurement_noise_r);
    let mut x = [values[0], 0.0];
    let mut p = [[params.initial_variance_p0, 0.0], [0.0, params.initial_variance_p0]];
    let mut out = Vec::with_capacity(values.len());
    for (i, &z) in values.iter().enumerate() {
        if i > 0 {
            x = [x[0] + x[1], x[1]];
            // F P Fᵀ + Q
            let p00 = p[0][0] + p[0][1] + p[1][0] + p[1][1] + q;
            let p01 = p[0][1] + p[1][1];
            let p10 = p[1][0] + p[1][1];
            let p11 = p[1][1] + q;
            p = [[p00, p01], [p10, p11]];
        }
        let s = p[0][0] + r;
        let k = [p[0][0] / s, p[1][0] / s];
        let innovation = z - x[0];
        x = [x[0] + k[0] * innovation, x[1] + k[1] * innovation];
        p = [
            [(1.0 - k[0]) * p[0][0], (1.0 - k[0]) * p[0][1]],
            [p[1][0] - k[1] * p[0][0], p[1][1] - k[1] * p[0][1]],
        ];
        out.push(KalmanState {
            value: x[0],
            slope: x[1],
            covariance: p,
        });
    }
    Ok(out)
}

/// Filtered value component of [`kalman_states`], saturated to the range of
/// the input curve.
pub fn kalman_smooth(curve: &FeatureCurve, params: &KalmanParams) -> Result<FeatureCurve> {
    let states = kalman_states(&curve.values, params)?;
    let lo = curve.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = curve.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FeatureCurve::filtered(
        states.iter().map(|s| s.value.clamp(lo, hi)).collect(),
    ))
}

/// Default scoring window: `round(width / 16)` made even (rounding down),
/// then clamped to `[8, 64]`.
pub fn auto_window(width: usize) -> usize {
    let mut l = (width as f64 / 16.0).round() as usize;
    if l % 2 == 1 {
        l -= 1;
    }
    l.clamp(8, 64)
}

/// A valley candidate: the leftmost column of a local minimum (plateaus
/// included) together with its prominence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Valley {
    pub x: usize,
    pub value: f64,
    pub prominence: f64,
}

/// Local minima (a run of equal values bounded by strictly larger values on
/// both sides) at positive curve values, reported at the run's leftmost
/// column. Prominence is the smaller of the two highest values reached on
/// each side before the curve dips below the valley.
pub fn valley_candidates(values: &[f64]) -> Vec<Valley> {
    let n = values.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if values[i] < values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] > values[i] && values[i] > 0.0 {
                let v = values[i];
                let left = values[..i]
                    .iter()
                    .rev()
                    .take_while(|&&c| c >= v)
                    .fold(v, |m, &c| m.max(c));
                let right = values[j + 1..]
                    .iter()
                    .take_while(|&&c| c >= v)
                    .fold(v, |m, &c| m.max(c));
                out.push(Valley {
                    x: i,
                    value: v,
                    prominence: left.min(right) - v,
                });
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// `Σ_{i=1..L} sign(C(t − L/2 + i) − C(t))` with `sign(v) = 1` for `v > 0`
/// and 0 otherwise. Window indices are clamped to the curve.
pub fn valley_score(values: &[f64], t: usize, window: usize) -> usize {
    let last = values.len() as i64 - 1;
    let half = (window / 2) as i64;
    (1..=window as i64)
        .filter(|&i| {
            let idx = (t as i64 - half + i).clamp(0, last) as usize;
            values[idx] > values[t]
        })
        .count()
}

/// Wrist column: the prominent valley with the best window score; ties go
/// to the deeper valley, then the smaller column.
pub fn detect_wrist(curve: &FeatureCurve, window: usize) -> Result<usize> {
    if window < 4 || window % 2 != 0 {
        return Err(Error::param("window", format!("must be even and ≥ 4, got {window}")));
    }
    let values = &curve.values;
    let mut best: Option<(usize, f64, usize)> = None;
    for v in valley_candidates(values) {
        if v.prominence < VALLEY_PROMINENCE {
            continue;
        }
        let score = valley_score(values, v.x, window);
        let better = match best {
            None => true,
            Some((bs, bv, bx)) => score > bs || (score == bs && (v.value < bv || (v.value == bv && v.x < bx))),
        };
        if better {
            best = Some((score, v.value, v.x));
        }
    }
    best.map(|(_, _, x)| x).ok_or(Error::NoValley)
}

/// Occupied column farthest from the wrist. On a tie, the side of the wrist
/// with more foreground wins (the hand side carries less); a further tie
/// picks the smaller column.
pub fn distal_point(mask: &BinaryMask, wrist_x: usize) -> Result<usize> {
    let counts = compute_ffrc(mask).values;
    let first = counts.iter().position(|&c| c > 0.0).ok_or(Error::EmptyMask)?;
    let last = counts.iter().rposition(|&c| c > 0.0).ok_or(Error::EmptyMask)?;
    let dl = wrist_x.abs_diff(first);
    let dr = last.abs_diff(wrist_x);
    if dl != dr {
        return Ok(if dl > dr { first } else { last });
    }
    let split = wrist_x.min(counts.len());
    let left_mass: f64 = counts[..split].iter().sum();
    let right_mass: f64 = counts.get(split + 1..).map_or(0.0, |s| s.iter().sum());
    Ok(if right_mass > left_mass { last } else { first })
}

/// Columns spaced uniformly from `distal_x` to `wrist_x` (inclusive).
/// Rounding collisions are pushed one pixel further toward the wrist.
pub fn sample_columns(distal_x: usize, wrist_x: usize, n_columns: usize) -> Vec<usize> {
    let dir: i64 = if wrist_x > distal_x { 1 } else { -1 };
    let span = wrist_x as f64 - distal_x as f64;
    let mut cols: Vec<i64> = Vec::with_capacity(n_columns);
    for k in 0..n_columns {
        let mut c = (distal_x as f64 + span * k as f64 / (n_columns - 1) as f64).round() as i64;
        if let Some(&prev) = cols.last() {
            while (c - prev) * dir <= 0 {
                c += dir;
            }
        }
        cols.push(c);
    }
    cols.into_iter().map(|c| c.max(0) as usize).collect()
}

/// Upper (smallest row) and lower (largest row) foreground pixel at each
/// sampled column.
pub fn sample_edge_points(mask: &BinaryMask, wrist_x: usize, distal_x: usize, n_columns: usize) -> Result<KeypointSet> {
    if n_columns < 2 {
        return Err(Error::param("n_columns", format!("must be ≥ 2, got {n_columns}")));
    }
    if wrist_x == distal_x {
        return Err(Error::param("wrist_x", "coincides with the distal column"));
    }
    let mut points = Vec::with_capacity(2 * n_columns);
    for x in sample_columns(distal_x, wrist_x, n_columns) {
        if x >= mask.width() {
            return Err(Error::MaskGap { column: x });
        }
        let mut rows = (0..mask.height()).filter(|&y| mask.get(x, y));
        let upper = rows.next().ok_or(Error::MaskGap { column: x })?;
        let lower = rows.next_back().unwrap_or(upper);
        points.push(Point::new(x as f64, upper as f64));
        points.push(Point::new(x as f64, lower as f64));
    }
    Ok(KeypointSet {
        points,
        wrist_x: wrist_x as f64,
        distal_x: distal_x as f64,
    })
}

/// Global maximum; the smallest column wins ties.
pub fn curve_peak(curve: &FeatureCurve) -> Result<(usize, f64)> {
    curve
        .values
        .iter()
        .copied()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, b)) if v <= b => best,
            _ => Some((i, v)),
        })
        .ok_or_else(|| Error::param("curve", "is empty"))
}
