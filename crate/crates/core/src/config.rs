//! Pipeline configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! mode = fam-tps
//! tps_lambda = 0.5
//! wrist_window_L = auto
//! ransac = 4
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffrc::{auto_window, KalmanParams, DEFAULT_KEYPOINT_COLUMNS};
use crate::orientation::{OrientationMethod, DEFAULT_STEP};
use crate::registration::{DEFAULT_RANSAC_ITERATIONS, DEFAULT_RANSAC_SEED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Fam,
    FamTps,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fam" => Ok(Mode::Fam),
            "fam-tps" => Ok(Mode::FamTps),
            other => Err(format!("unknown mode `{other}` (expected fam or fam-tps)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSize {
    Auto,
    Fixed(usize),
}

impl WindowSize {
    pub fn resolve(&self, width: usize) -> usize {
        match *self {
            WindowSize::Auto => auto_window(width),
            WindowSize::Fixed(l) => l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub kalman: KalmanParams,
    pub wrist_window_l: WindowSize,
    pub n_keypoint_columns: usize,
    pub mode: Mode,
    pub tps_lambda: f64,
    /// RANSAC inlier threshold in pixels; `None` disables RANSAC.
    pub ransac: Option<f64>,
    pub ransac_iterations: usize,
    pub ransac_seed: u64,
    pub orientation: OrientationMethod,
    pub orientation_step: f64,
    pub overlay_weights: (f64, f64),
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            kalman: KalmanParams::default(),
            wrist_window_l: WindowSize::Auto,
            n_keypoint_columns: DEFAULT_KEYPOINT_COLUMNS,
            mode: Mode::Fam,
            tps_lambda: 0.0,
            ransac: None,
            ransac_iterations: DEFAULT_RANSAC_ITERATIONS,
            ransac_seed: DEFAULT_RANSAC_SEED,
            orientation: OrientationMethod::MinRect,
            orientation_step: DEFAULT_STEP,
            overlay_weights: (0.4, 0.6),
        }
    }
}

fn range(field: &str, message: impl Into<String>) -> Error {
    Error::ConfigRange {
        field: field.to_string(),
        message: message.into(),
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("kalman_q", self.kalman.process_noise_q),
            ("kalman_r", self.kalman.measurement_noise_r),
            ("kalman_p0", self.kalman.initial_variance_p0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(range(field, format!("must be > 0, got {v}")));
            }
        }
        if let WindowSize::Fixed(l) = self.wrist_window_l {
            if l < 4 || l % 2 != 0 {
                return Err(range("wrist_window_L", format!("must be even and ≥ 4, got {l}")));
            }
        }
        if self.n_keypoint_columns < 2 {
            return Err(range("n_keypoint_columns", "must be ≥ 2"));
        }
        if !(self.tps_lambda.is_finite() && self.tps_lambda >= 0.0) {
            return Err(range("tps_lambda", format!("must be ≥ 0, got {}", self.tps_lambda)));
        }
        if let Some(t) = self.ransac {
            if !(t.is_finite() && t > 0.0) {
                return Err(range("ransac", format!("threshold must be > 0, got {t}")));
            }
        }
        if self.ransac_iterations == 0 {
            return Err(range("ransac_iterations", "must be ≥ 1"));
        }
        if !(self.orientation_step > 0.0 && self.orientation_step <= 5.0) {
            return Err(range("orientation_step", "must lie in (0, 5]"));
        }
        let (wf, wm) = self.overlay_weights;
        for (field, v) in [("overlay_fixed_weight", wf), ("overlay_moving_weight", wm)] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(range(field, format!("must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Strict parse: unknown keys, duplicate keys and malformed lines are
    /// errors carrying their 1-based line number.
    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::ConfigParse {
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            let float = || -> Result<f64> {
                value
                    .parse::<f64>()
                    .map_err(|_| err(format!("`{key}` expects a number, got `{value}`")))
            };
            let int = || -> Result<u64> {
                value
                    .parse::<u64>()
                    .map_err(|_| err(format!("`{key}` expects a non-negative integer, got `{value}`")))
            };
            match key {
                "kalman_q" => cfg.kalman.process_noise_q = float()?,
                "kalman_r" => cfg.kalman.measurement_noise_r = float()?,
                "kalman_p0" => cfg.kalman.initial_variance_p0 = float()?,
                "wrist_window_L" => {
                    cfg.wrist_window_l = if value == "auto" {
                        WindowSize::Auto
                    } else {
                        WindowSize::Fixed(int()? as usize)
                    }
                }
                "n_keypoint_columns" => cfg.n_keypoint_columns = int()? as usize,
                "mode" => cfg.mode = value.parse().map_err(err)?,
                "tps_lambda" => cfg.tps_lambda = float()?,
                "ransac" => cfg.ransac = if value == "off" { None } else { Some(float()?) },
                "ransac_iterations" => cfg.ransac_iterations = int()? as usize,
                "ransac_seed" => cfg.ransac_seed = int()?,
                "orientation" => {
                    cfg.orientation = match value {
                        "min_rect" => OrientationMethod::MinRect,
                        "exhaustive" => OrientationMethod::Exhaustive,
                        other => return Err(err(format!("unknown orientation method `{other}`"))),
                    }
                }
                "orientation_step" => cfg.orientation_step = float()?,
                "overlay_fixed_weight" => cfg.overlay_weights.0 = float()?,
                "overlay_moving_weight" => cfg.overlay_weights.1 = float()?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads a config file; a path that does not exist yields the defaults.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    match std::fs::read_to_string(path) {
        Ok(text) => PipelineConfig::parse(&text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(PipelineConfig::default()),
        Err(e) => Err(e.into()),
    }
}
