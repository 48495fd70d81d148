//! Parametric synthetic forearms with known silhouettes, keypoints and
//! inter-image transforms.
//!
//! The silhouette lives in a canonical frame where the limb axis is the row
//! through the canvas center, the elbow is on the left and the hand on the
//! right. Thickness tapers linearly from the elbow to the wrist, then the
//! palm rises to its projected width and closes as a half-ellipse. Axial
//! rotation narrows the palm by `0.35 + 0.65·cos(angle)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffrc::{FeatureCurve, KeypointSet, DEFAULT_KEYPOINT_COLUMNS};
use crate::geometry::{AffineTransform, Point};
use crate::raster::{BinaryMask, Image};

/// Fraction of the palm length over which the palm widens before closing.
const PALM_RISE: f64 = 0.4;
/// Per-channel uniform noise amplitude on skin pixels.
pub const SKIN_NOISE: i32 = 6;
/// Clearance kept between the silhouette and the canvas border.
const FIT_MARGIN: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForearmParams {
    pub canvas: (usize, usize),
    pub arm_length: f64,
    pub wrist_width: f64,
    pub elbow_width: f64,
    pub palm_length: f64,
    pub palm_max_width: f64,
    /// Axial rotation of the forearm, degrees in `[0, 90]`.
    pub axial_angle: f64,
    /// Direction of the limb axis in the image, degrees in `[0, 180)`.
    pub in_plane_angle: f64,
    pub skin_color: [u8; 3],
    pub background_color: [u8; 3],
    pub seed: u64,
}

impl Default for ForearmParams {
    fn default() -> Self {
        Self {
            canvas: (900, 900),
            arm_length: 520.0,
            wrist_width: 36.0,
            elbow_width: 130.0,
            palm_length: 150.0,
            palm_max_width: 125.0,
            axial_angle: 0.0,
            in_plane_angle: 0.0,
            skin_color: [210, 160, 140],
            background_color: [60, 60, 60],
            seed: 1,
        }
    }
}

impl ForearmParams {
    /// A short arm with a palm much wider than the elbow, so the palm stays
    /// the widest part of the silhouette at every axial angle. The default
    /// geometry is elongated instead, which keeps its principal direction
    /// well defined.
    pub fn palm_dominant() -> Self {
        Self {
            canvas: (800, 600),
            arm_length: 300.0,
            wrist_width: 56.0,
            elbow_width: 80.0,
            palm_length: 150.0,
            palm_max_width: 260.0,
            ..Self::default()
        }
    }

    /// Palm width seen by the camera at the configured axial angle.
    pub fn projected_palm_width(&self) -> f64 {
        self.palm_max_width * (0.35 + 0.65 * self.axial_angle.to_radians().cos())
    }

    pub fn total_length(&self) -> f64 {
        self.arm_length + self.palm_length
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("arm_length", self.arm_length),
            ("wrist_width", self.wrist_width),
            ("elbow_width", self.elbow_width),
            ("palm_length", self.palm_length),
            ("palm_max_width", self.palm_max_width),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.canvas.0 < 5 || self.canvas.1 < 5 {
            return Err(Error::param("canvas", "must be at least 5×5"));
        }
        if self.wrist_width >= self.elbow_width {
            return Err(Error::param("wrist_width", "must be smaller than elbow_width"));
        }
        if !(0.0..=90.0).contains(&self.axial_angle) {
            return Err(Error::param("axial_angle", format!("must lie in [0, 90], got {}", self.axial_angle)));
        }
        if !(0.0..180.0).contains(&self.in_plane_angle) {
            return Err(Error::param(
                "in_plane_angle",
                format!("must lie in [0, 180), got {}", self.in_plane_angle),
            ));
        }
        if self.projected_palm_width() <= self.wrist_width {
            return Err(Error::param("palm_max_width", "projected palm must be wider than the wrist"));
        }
        Ok(())
    }

    pub fn canvas_center(&self) -> Point {
        Point::new((self.canvas.0 as f64 - 1.0) / 2.0, (self.canvas.1 as f64 - 1.0) / 2.0)
    }

    /// Canonical column of the elbow end.
    pub fn elbow_x(&self) -> f64 {
        self.canvas_center().x - self.total_length() / 2.0
    }

    /// Canonical column of the wrist.
    pub fn wrist_x(&self) -> f64 {
        self.elbow_x() + self.arm_length
    }

    /// Canonical frame → image for the fixed image.
    pub fn placement(&self) -> AffineTransform {
        AffineTransform::similarity_about(self.canvas_center(), self.in_plane_angle, 1.0, 0.0, 0.0)
    }
}

/// Smooth outward edge displacement along the arm, used to give the moving
/// image a deformation an affine map cannot undo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeBump {
    /// Outward displacement of each edge at the bump center, pixels.
    pub amplitude: f64,
}

impl EdgeBump {
    fn offset(&self, params: &ForearmParams, u: f64) -> f64 {
        let center = 0.5 * params.arm_length;
        let sigma = 0.15 * params.arm_length;
        let d = (u - center) / sigma;
        self.amplitude * (-d * d).exp()
    }
}

/// Silhouette thickness at distance `u` from the elbow, zero outside.
pub fn thickness(params: &ForearmParams, bump: Option<&EdgeBump>, u: f64) -> f64 {
    let base = if u < 0.0 || u > params.total_length() {
        return 0.0;
    } else if u <= params.arm_length {
        params.elbow_width + (params.wrist_width - params.elbow_width) * u / params.arm_length
    } else {
        let v = (u - params.arm_length) / params.palm_length;
        let wp = params.projected_palm_width();
        if v <= PALM_RISE {
            params.wrist_width + (wp - params.wrist_width) * (std::f64::consts::FRAC_PI_2 * v / PALM_RISE).sin()
        } else {
            let e = (v - PALM_RISE) / (1.0 - PALM_RISE);
            wp * (1.0 - e * e).max(0.0).sqrt()
        }
    };
    base + bump.map_or(0.0, |b| 2.0 * b.offset(params, u))
}

/// One rendered fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ForearmSample {
    pub image: Image,
    pub mask: BinaryMask,
    /// Analytic edge points at the sampled columns, mapped into the image.
    /// `wrist_x` / `distal_x` are canonical-frame columns.
    pub keypoints: KeypointSet,
    /// Silhouette thickness per canonical column.
    pub analytic_curve: FeatureCurve,
    /// Canonical frame → this image.
    pub placement: AffineTransform,
}

fn render(
    params: &ForearmParams,
    placement: &AffineTransform,
    bump: Option<&EdgeBump>,
    colors: ([u8; 3], [u8; 3]),
    seed: u64,
) -> Result<ForearmSample> {
    params.validate()?;
    let (w, h) = params.canvas;
    let cy = params.canvas_center().y;
    let x0 = params.elbow_x();
    let total = params.total_length();

    let widest = (0..=total.ceil() as usize)
        .map(|u| thickness(params, bump, u as f64))
        .fold(0.0, f64::max);
    let corners = [
        Point::new(x0, cy - widest / 2.0),
        Point::new(x0 + total, cy - widest / 2.0),
        Point::new(x0, cy + widest / 2.0),
        Point::new(x0 + total, cy + widest / 2.0),
    ];
    for c in corners {
        let p = placement.apply(c);
        if p.x < FIT_MARGIN || p.y < FIT_MARGIN || p.x > w as f64 - 1.0 - FIT_MARGIN || p.y > h as f64 - 1.0 - FIT_MARGIN {
            return Err(Error::Fit(format!(
                "silhouette corner maps to ({:.1}, {:.1}) on a {w}×{h} canvas",
                p.x, p.y
            )));
        }
    }

    let to_canonical = placement.inverse()?;
    let mask = BinaryMask::from_fn(w, h, |x, y| {
        let q = to_canonical.apply(Point::new(x as f64, y as f64));
        let u = q.x - x0;
        u >= 0.0 && u <= total && (q.y - cy).abs() <= thickness(params, bump, u) / 2.0
    });

    let (skin, background) = colors;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(w * h * 3);
    for &fg in mask.data() {
        if fg {
            for c in skin {
                let n: i32 = rng.gen_range(-SKIN_NOISE..=SKIN_NOISE);
                data.push((c as i32 + n).clamp(0, 255) as u8);
            }
        } else {
            data.extend_from_slice(&background);
        }
    }
    let image = Image::new(w, h, 3, data)?;

    let n = DEFAULT_KEYPOINT_COLUMNS;
    let mut points = Vec::with_capacity(2 * n);
    for k in 0..n {
        let x = x0 + params.arm_length * k as f64 / (n - 1) as f64;
        let t = thickness(params, bump, x - x0);
        points.push(placement.apply(Point::new(x, cy - t / 2.0)));
        points.push(placement.apply(Point::new(x, cy + t / 2.0)));
    }
    let analytic = (0..w).map(|x| thickness(params, bump, x as f64 - x0)).collect();

    Ok(ForearmSample {
        image,
        mask,
        keypoints: KeypointSet {
            points,
            wrist_x: params.wrist_x(),
            distal_x: x0,
        },
        analytic_curve: FeatureCurve::raw(analytic),
        placement: *placement,
    })
}

pub fn generate_forearm(params: &ForearmParams) -> Result<ForearmSample> {
    render(
        params,
        &params.placement(),
        None,
        (params.skin_color, params.background_color),
        params.seed,
    )
}

/// Fixed / moving fixtures related by a known transform.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub fixed: ForearmSample,
    pub moving: ForearmSample,
    /// Fixed image coordinates → moving image coordinates.
    pub fixed_to_moving: AffineTransform,
}

impl SyntheticPair {
    /// The transform registration should recover (moving → fixed).
    pub fn moving_to_fixed(&self) -> AffineTransform {
        self.fixed_to_moving.inverse().expect("generator transforms are invertible")
    }
}

/// Appearance of the moving image when it should differ from the fixed one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingStyle {
    pub skin_color: [u8; 3],
    pub background_color: [u8; 3],
}

pub fn generate_pair(params: &ForearmParams, transform: &AffineTransform, deform: Option<f64>) -> Result<SyntheticPair> {
    generate_pair_styled(params, transform, deform, None)
}

/// As [`generate_pair`] with an optional different palette for the moving
/// image.
pub fn generate_pair_styled(
    params: &ForearmParams,
    transform: &AffineTransform,
    deform: Option<f64>,
    style: Option<MovingStyle>,
) -> Result<SyntheticPair> {
    if transform.inverse().is_err() {
        return Err(Error::SingularTransform);
    }
    let fixed = generate_forearm(params)?;
    let bump = deform.map(|amplitude| EdgeBump { amplitude });
    let colors = style.map_or((params.skin_color, params.background_color), |s| {
        (s.skin_color, s.background_color)
    });
    let moving_placement = transform.compose(&params.placement());
    let moving = render(
        params,
        &moving_placement,
        bump.as_ref(),
        colors,
        params.seed.wrapping_add(0x9e37_79b9),
    )?;
    Ok(SyntheticPair {
        fixed,
        moving,
        fixed_to_moving: *transform,
    })
}

/// Parses `"rot=10,scale=1.1,tx=25,ty=-5"` into a similarity about
/// `center`. Missing keys default to the identity.
pub fn parse_transform_spec(spec: &str, center: Point) -> Result<AffineTransform> {
    let (mut rot, mut scale, mut tx, mut ty) = (0.0, 1.0, 0.0, 0.0);
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::param("transform", format!("expected key=value, got `{part}`")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::param("transform", format!("`{value}` is not a number")))?;
        match key.trim() {
            "rot" => rot = v,
            "scale" => scale = v,
            "tx" => tx = v,
            "ty" => ty = v,
            other => return Err(Error::param("transform", format!("unknown key `{other}`"))),
        }
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::param("transform", "scale must be > 0"));
    }
    Ok(AffineTransform::similarity_about(center, rot, scale, tx, ty))
}
