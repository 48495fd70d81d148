//! End-to-end FAM / FAM-TPS registration and the batch runner.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, PipelineConfig};
use crate::error::{Error, Result, StageExt};
use crate::ffrc::{
    compute_ffrc, detect_wrist, distal_point, kalman_smooth, sample_edge_points, FeatureCurve, KeypointSet,
};
use crate::geometry::{AffineTransform, Point};
use crate::io;
use crate::metrics::{keypoint_ed, mask_metrics, RegistrationReport};
use crate::orientation::{principal_direction, PrincipalDirection};
use crate::raster::{BinaryMask, Image, RotationFrame};
use crate::registration::{
    blend_overlay, estimate_affine, match_structural, tps_fit, warp_image_and_mask, AffineEstimate, MatchedPairs,
    RansacParams, TpsWarp, Warp,
};
use crate::segmentation::extract_skin_mask;

/// Format version of the JSON / CSV artifacts.
pub const FORMAT_VERSION: &str = "1";

/// Everything derived from one image on the way to its keypoints.
#[derive(Debug, Clone)]
pub struct LimbFeatures {
    pub mask: BinaryMask,
    pub direction: PrincipalDirection,
    /// Horizontal mask, hand on the right.
    pub normalized: BinaryMask,
    /// Normalized-frame coordinates → image coordinates.
    pub to_image: AffineTransform,
    pub raw_curve: FeatureCurve,
    pub filtered_curve: FeatureCurve,
    pub window: usize,
    /// Keypoints in the normalized frame.
    pub normalized_keypoints: KeypointSet,
    /// Keypoints in image coordinates.
    pub keypoints: KeypointSet,
}

struct CurveStage {
    raw: FeatureCurve,
    filtered: FeatureCurve,
    wrist: usize,
    distal: usize,
}

fn curve_stage(normalized: &BinaryMask, window: usize, cfg: &PipelineConfig) -> Result<CurveStage> {
    let raw = compute_ffrc(normalized);
    let filtered = kalman_smooth(&raw, &cfg.kalman).stage("curve")?;
    let wrist = detect_wrist(&filtered, window).stage("wrist")?;
    let distal = distal_point(normalized, wrist).stage("distal")?;
    Ok(CurveStage {
        raw,
        filtered,
        wrist,
        distal,
    })
}

/// Orients a mask, finds wrist and distal columns and samples the edge
/// keypoints. `reference_width` drives the automatic window size.
pub fn features_from_mask(mask: BinaryMask, reference_width: usize, cfg: &PipelineConfig) -> Result<LimbFeatures> {
    let direction = principal_direction(&mask, cfg.orientation, cfg.orientation_step).stage("orient")?;
    let frame = RotationFrame::new(mask.width(), mask.height(), direction.angle);
    let mut normalized = frame.apply(&mask);
    let mut to_image = frame.backward();
    let window = cfg.wrist_window_l.resolve(reference_width);

    let mut stage = curve_stage(&normalized, window, cfg)?;
    if stage.wrist < stage.distal {
        // Put the hand on the right so upper/lower edges agree between images.
        let (w, h) = (normalized.width() as f64, normalized.height() as f64);
        let half_turn = AffineTransform::new([[-1.0, 0.0, w - 1.0], [0.0, -1.0, h - 1.0]]);
        normalized = normalized.rotate_180();
        to_image = to_image.compose(&half_turn);
        stage = curve_stage(&normalized, window, cfg)?;
    }

    let normalized_keypoints =
        sample_edge_points(&normalized, stage.wrist, stage.distal, cfg.n_keypoint_columns).stage("keypoints")?;
    let keypoints = KeypointSet {
        points: normalized_keypoints.points.iter().map(|p| to_image.apply(*p)).collect(),
        wrist_x: normalized_keypoints.wrist_x,
        distal_x: normalized_keypoints.distal_x,
    };
    Ok(LimbFeatures {
        mask,
        direction,
        normalized,
        to_image,
        raw_curve: stage.raw,
        filtered_curve: stage.filtered,
        window,
        normalized_keypoints,
        keypoints,
    })
}

pub fn extract_features(image: &Image, cfg: &PipelineConfig) -> Result<LimbFeatures> {
    let mask = extract_skin_mask(image).stage("mask")?;
    features_from_mask(mask, image.width(), cfg)
}

/// Serialized transform of a registration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformDump {
    pub format_version: String,
    pub mode: Mode,
    /// FAM affine, moving → fixed.
    pub affine: AffineTransform,
    pub inliers: Vec<bool>,
    /// Present for FAM-TPS; maps fixed → moving.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tps: Option<TpsWarp>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub fixed: LimbFeatures,
    pub moving: LimbFeatures,
    pub affine: AffineEstimate,
    pub warp: Warp,
    pub warped: Image,
    pub warped_mask: BinaryMask,
    pub overlay: Image,
    pub report: RegistrationReport,
}

impl PipelineOutput {
    pub fn transform_dump(&self, mode: Mode) -> TransformDump {
        TransformDump {
            format_version: FORMAT_VERSION.into(),
            mode,
            affine: self.affine.transform,
            inliers: self.affine.inliers.clone(),
            tps: match &self.warp {
                Warp::Tps(t) => Some(t.clone()),
                Warp::Affine(_) => None,
            },
        }
    }
}

/// Spline controls: the affine inliers, without repeated fixed points
/// (a one-pixel-thick sampled column yields the same upper and lower point).
fn tps_controls(pairs: &MatchedPairs, inliers: &[bool]) -> MatchedPairs {
    let mut fixed: Vec<Point> = Vec::with_capacity(pairs.count());
    let mut moving = Vec::with_capacity(pairs.count());
    for ((f, m), &keep) in pairs.fixed.iter().zip(&pairs.moving).zip(inliers) {
        if keep && !fixed.contains(f) {
            fixed.push(*f);
            moving.push(*m);
        }
    }
    MatchedPairs { fixed, moving }
}

/// mask → orient → FFRC → keypoints → match → affine (→ TPS) → warp →
/// metrics. The output canvas is the fixed image's.
pub fn run_pipeline(fixed: &Image, moving: &Image, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let fixed_features = extract_features(fixed, cfg).stage("fixed")?;
    let moving_features = extract_features(moving, cfg).stage("moving")?;
    let pairs = match_structural(&fixed_features.keypoints, &moving_features.keypoints).stage("match")?;
    let ransac = cfg.ransac.map(|threshold| RansacParams {
        threshold,
        iterations: cfg.ransac_iterations,
        seed: cfg.ransac_seed,
    });
    let affine = estimate_affine(&pairs, ransac.as_ref()).stage("affine")?;
    let warp = match cfg.mode {
        Mode::Fam => Warp::Affine(affine.transform),
        // The spline's own affine part absorbs the FAM alignment, so fitting
        // fixed → original moving equals FAM followed by the deformable step.
        Mode::FamTps => Warp::Tps(tps_fit(&tps_controls(&pairs, &affine.inliers), cfg.tps_lambda).stage("tps")?),
    };
    let size = (fixed.width(), fixed.height());
    let (warped, warped_mask) = warp_image_and_mask(moving, &moving_features.mask, &warp, size).stage("warp")?;
    let overlay = blend_overlay(fixed, &warped, cfg.overlay_weights.0, cfg.overlay_weights.1).stage("overlay")?;

    let metrics = mask_metrics(&fixed_features.mask, &warped_mask).stage("metrics")?;
    let mut report = RegistrationReport::new(metrics, serde_json::to_value(cfg)?);
    let (ed, mean) = keypoint_ed(&affine.transform, &pairs.moving, &pairs.fixed).stage("metrics")?;
    report.keypoint_ed = Some(ed);
    report.keypoint_ed_mean = Some(mean);

    Ok(PipelineOutput {
        fixed: fixed_features,
        moving: moving_features,
        affine,
        warp,
        warped,
        warped_mask,
        overlay,
        report,
    })
}

/// Files that are removed again unless [`commit`](Self::commit) is called.
#[derive(Default)]
pub struct OutputGuard {
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, path: &Path, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let result = f(path);
        if path.exists() {
            self.written.push(path.to_path_buf());
        }
        result
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// Destinations of a `register` run.
#[derive(Debug, Clone)]
pub struct RegisterPaths {
    pub warped: PathBuf,
    pub overlay: PathBuf,
    pub transform: PathBuf,
    pub report: PathBuf,
    pub debug_dir: Option<PathBuf>,
}

impl RegisterPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            warped: dir.join("warped.png"),
            overlay: dir.join("overlay.png"),
            transform: dir.join("transform.json"),
            report: dir.join("report.json"),
            debug_dir: None,
        }
    }
}

fn keypoint_records(kp: &KeypointSet) -> serde_json::Value {
    serde_json::to_value(kp).expect("keypoints serialize")
}

/// Writes every artifact of a run. On failure nothing written here is left
/// behind.
pub fn write_outputs(out: &PipelineOutput, cfg: &PipelineConfig, paths: &RegisterPaths) -> Result<()> {
    let mut guard = OutputGuard::new();
    if let Some(dir) = &paths.debug_dir {
        fs::create_dir_all(dir)?;
        let d = |name: &str| dir.join(name);
        for (tag, f) in [("fixed", &out.fixed), ("moving", &out.moving)] {
            guard.write(&d(&format!("01_{tag}_mask.pgm")), |p| io::save_mask(&f.mask, p))?;
            guard.write(&d(&format!("02_{tag}_oriented.pgm")), |p| io::save_mask(&f.normalized, p))?;
            guard.write(&d(&format!("03_{tag}_curve.csv")), |p| {
                io::write_curve_csv(&f.raw_curve, &f.filtered_curve, p)
            })?;
            guard.write(&d(&format!("04_{tag}_keypoints.json")), |p| {
                io::write_json(
                    &serde_json::json!({
                        "direction": f.direction,
                        "window": f.window,
                        "normalized": keypoint_records(&f.normalized_keypoints),
                        "image": keypoint_records(&f.keypoints),
                    }),
                    p,
                )
            })?;
        }
        guard.write(&d("05_transform.json"), |p| io::write_json(&out.transform_dump(cfg.mode), p))?;
        guard.write(&d("06_warped_mask.pgm"), |p| io::save_mask(&out.warped_mask, p))?;
        guard.write(&d("07_overlay.png"), |p| io::save_image(&out.overlay, p))?;
        guard.write(&d("08_report.json"), |p| io::write_json(&out.report, p))?;
    }
    guard.write(&paths.warped, |p| io::save_image(&out.warped, p))?;
    guard.write(&paths.overlay, |p| io::save_image(&out.overlay, p))?;
    guard.write(&paths.transform, |p| io::write_json(&out.transform_dump(cfg.mode), p))?;
    guard.write(&paths.report, |p| io::write_json(&out.report, p))?;
    guard.commit();
    Ok(())
}

/// One image pair of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchJob {
    pub name: String,
    pub fixed: PathBuf,
    pub moving: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub name: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error_kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dice: Option<f64>,
}

/// Parses a job list: one `name fixed moving` triple per line, `#`
/// comments allowed. Relative paths resolve against `base`.
pub fn parse_job_list(text: &str, base: &Path) -> Result<Vec<BatchJob>> {
    let mut jobs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, fixed, moving] = fields[..] else {
            return Err(Error::ConfigParse {
                line: i + 1,
                message: format!("expected `name fixed moving`, got `{line}`"),
            });
        };
        if name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(Error::ConfigParse {
                line: i + 1,
                message: format!("job name `{name}` must be a plain directory name"),
            });
        }
        jobs.push(BatchJob {
            name: name.to_string(),
            fixed: base.join(fixed),
            moving: base.join(moving),
        });
    }
    Ok(jobs)
}

fn run_job(job: &BatchJob, cfg: &PipelineConfig, out_root: &Path) -> Result<f64> {
    let fixed = io::load_rgb(&job.fixed).stage("load")?;
    let moving = io::load_rgb(&job.moving).stage("load")?;
    let out = run_pipeline(&fixed, &moving, cfg)?;
    let dir = out_root.join(&job.name);
    fs::create_dir_all(&dir)?;
    write_outputs(&out, cfg, &RegisterPaths::in_dir(&dir))?;
    Ok(out.report.dice)
}

/// Runs independent jobs concurrently, each into `out_root/<name>/`, and
/// writes `out_root/summary.json` in job order.
pub fn run_batch(jobs: &[BatchJob], cfg: &PipelineConfig, out_root: &Path) -> Result<Vec<BatchEntry>> {
    cfg.validate()?;
    fs::create_dir_all(out_root)?;
    let entries: Vec<BatchEntry> = jobs
        .par_iter()
        .map(|job| match run_job(job, cfg, out_root) {
            Ok(dice) => BatchEntry {
                name: job.name.clone(),
                status: "ok".into(),
                error_kind: None,
                error: None,
                dice: Some(dice),
            },
            Err(e) => {
                let _ = fs::remove_dir(out_root.join(&job.name));
                BatchEntry {
                    name: job.name.clone(),
                    status: "error".into(),
                    error_kind: Some(e.kind().into()),
                    error: Some(e.to_string()),
                    dice: None,
                }
            }
        })
        .collect();
    io::write_json(
        &serde_json::json!({
            "format_version": FORMAT_VERSION,
            "config": cfg,
            "jobs": entries,
        }),
        &out_root.join("summary.json"),
    )?;
    Ok(entries)
}

/// Keypoints of `kp` mapped through `t`.
pub fn map_points(t: &AffineTransform, points: &[Point]) -> Vec<Point> {
    points.iter().map(|p| t.apply(*p)).collect()
}
