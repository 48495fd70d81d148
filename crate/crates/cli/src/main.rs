use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use famreg::ffrc::{compute_ffrc, kalman_smooth, KeypointSet};
use famreg::geometry::{AffineTransform, Point};
use famreg::metrics::{keypoint_ed, mask_metrics};
use famreg::orientation::{normalize_horizontal, principal_direction, OrientationMethod};
use famreg::pipeline::{features_from_mask, parse_job_list, write_outputs, RegisterPaths, FORMAT_VERSION};
use famreg::segmentation::extract_skin_mask;
use famreg::synthgen::{generate_pair_styled, parse_transform_spec, EdgeBump, ForearmParams};
use famreg::{io, load_config, run_batch, run_pipeline, Error, Mode, PipelineConfig, RegistrationReport};

/// Exit code for command-line usage errors.
const USAGE_EXIT: u8 = 2;
/// Exit code when a batch ran but at least one job failed.
const BATCH_EXIT: u8 = 40;

#[derive(Parser)]
#[command(name = "famreg", about = "Structure-based forearm image registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    MinRect,
    Exhaustive,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Elongated,
    PalmDominant,
}

#[derive(Subcommand)]
enum Command {
    /// Segment the skin region of a color image into a binary mask.
    Mask { input: PathBuf, output: PathBuf },
    /// Print the principal direction of a mask.
    Orient {
        mask: PathBuf,
        #[arg(long, value_enum)]
        method: Option<Method>,
        /// Angular step of the exhaustive search, degrees.
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the raw and filtered feature curve of the normalized mask.
    Curve {
        mask: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Detect wrist and distal columns and write the edge keypoints.
    Keypoints {
        mask: PathBuf,
        #[arg(long)]
        json: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Register a moving image onto a fixed image.
    Register {
        fixed: PathBuf,
        moving: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Enables RANSAC with this inlier threshold in pixels.
        #[arg(long)]
        ransac: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        debug_dir: Option<PathBuf>,
    },
    /// Compare a registered mask with the fixed mask.
    Evaluate {
        fixed_mask: PathBuf,
        warped_mask: PathBuf,
        /// Ground-truth fixed and moving keypoint files.
        #[arg(long, num_args = 2, value_names = ["FIXED", "MOVING"], requires = "transform")]
        keypoints: Option<Vec<PathBuf>>,
        /// Transform file mapping moving onto fixed coordinates.
        #[arg(long, requires = "keypoints")]
        transform: Option<PathBuf>,
    },
    /// Generate a synthetic fixed/moving pair with ground truth.
    Synth {
        /// Axial rotation of the forearm, degrees in [0, 90].
        #[arg(long)]
        angle: f64,
        /// Fixed → moving similarity, e.g. "rot=10,scale=1.1,tx=25,ty=-5".
        #[arg(long, default_value = "")]
        transform: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        in_plane: f64,
        /// Amplitude of an edge bump on the moving image, pixels.
        #[arg(long)]
        deform: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "elongated")]
        preset: Preset,
    },
    /// Register every pair of a job list into per-job directories.
    Batch {
        list: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Failure {
    Core(Error),
    Usage(String),
    Batch(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn report(&self) -> (u8, Value) {
        match self {
            Failure::Core(e) => (
                e.exit_code() as u8,
                json!({"error": e.kind(), "stage": e.stage(), "message": e.to_string()}),
            ),
            Failure::Usage(m) => (USAGE_EXIT, json!({"error": "usage", "stage": null, "message": m})),
            Failure::Batch(n) => (
                BATCH_EXIT,
                json!({"error": "batch_job_failed", "stage": null, "message": format!("{n} job(s) failed")}),
            ),
        }
    }
}

fn config_from(path: Option<&Path>) -> Result<PipelineConfig, Error> {
    path.map_or_else(|| Ok(PipelineConfig::default()), load_config)
}

fn print_json(value: &impl serde::Serialize) -> Result<(), Error> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Keypoints from a plain keypoint set or from a `synth` output.
fn read_points(path: &Path) -> Result<Vec<Point>, Error> {
    let v: Value = io::read_json(path)?;
    let set = v.get("keypoints").unwrap_or(&v);
    Ok(serde_json::from_value::<KeypointSet>(set.clone())?.points)
}

/// Moving → fixed affine from a `register` dump, a `synth` ground truth or
/// a bare transform.
fn read_transform(path: &Path) -> Result<AffineTransform, Error> {
    let v: Value = io::read_json(path)?;
    let t = v.get("affine").or_else(|| v.get("moving_to_fixed")).unwrap_or(&v);
    Ok(serde_json::from_value(t.clone())?)
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Mask { input, output } => {
            let mask = extract_skin_mask(&io::load_rgb(&input)?)?;
            io::save_mask(&mask, &output)?;
            print_json(&json!({"width": mask.width(), "height": mask.height(), "foreground": mask.count()}))?;
        }
        Command::Orient {
            mask,
            method,
            step,
            config,
        } => {
            let cfg = config_from(config.as_deref())?;
            let method = match method {
                Some(Method::MinRect) => OrientationMethod::MinRect,
                Some(Method::Exhaustive) => OrientationMethod::Exhaustive,
                None => cfg.orientation,
            };
            let dir = principal_direction(&io::load_mask(&mask)?, method, step.unwrap_or(cfg.orientation_step))?;
            print_json(&dir)?;
        }
        Command::Curve { mask, csv, config } => {
            let cfg = config_from(config.as_deref())?;
            let mask = io::load_mask(&mask)?;
            let dir = principal_direction(&mask, cfg.orientation, cfg.orientation_step)?;
            let raw = compute_ffrc(&normalize_horizontal(&mask, &dir));
            let filtered = kalman_smooth(&raw, &cfg.kalman)?;
            io::write_curve_csv(&raw, &filtered, &csv)?;
            print_json(&json!({"direction": dir, "columns": raw.len()}))?;
        }
        Command::Keypoints { mask, json, config } => {
            let cfg = config_from(config.as_deref())?;
            let mask = io::load_mask(&mask)?;
            let width = mask.width();
            let f = features_from_mask(mask, width, &cfg)?;
            let out = json!({
                "format_version": FORMAT_VERSION,
                "direction": f.direction,
                "window": f.window,
                "keypoints": f.keypoints,
                "normalized_keypoints": f.normalized_keypoints,
            });
            io::write_json(&out, &json)?;
            print_json(&json!({"wrist_x": f.keypoints.wrist_x, "distal_x": f.keypoints.distal_x, "points": f.keypoints.len()}))?;
        }
        Command::Register {
            fixed,
            moving,
            mode,
            lambda,
            ransac,
            config,
            out_dir,
            debug_dir,
        } => {
            let mut cfg = config_from(config.as_deref())?;
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.tps_lambda = lambda.unwrap_or(cfg.tps_lambda);
            cfg.ransac = ransac.or(cfg.ransac);
            cfg.validate()?;
            let out = run_pipeline(&io::load_rgb(&fixed)?, &io::load_rgb(&moving)?, &cfg)?;
            fs::create_dir_all(&out_dir)?;
            let mut paths = RegisterPaths::in_dir(&out_dir);
            paths.debug_dir = debug_dir;
            write_outputs(&out, &cfg, &paths)?;
            print_json(&out.report)?;
        }
        Command::Evaluate {
            fixed_mask,
            warped_mask,
            keypoints,
            transform,
        } => {
            let metrics = mask_metrics(&io::load_mask(&fixed_mask)?, &io::load_mask(&warped_mask)?)?;
            let mut report = RegistrationReport::new(
                metrics,
                json!({"fixed_mask": fixed_mask, "warped_mask": warped_mask, "transform": transform}),
            );
            if let (Some(kp), Some(t)) = (keypoints, transform) {
                let fixed = read_points(&kp[0])?;
                let moving = read_points(&kp[1])?;
                let (ed, mean) = keypoint_ed(&read_transform(&t)?, &moving, &fixed)?;
                report.keypoint_ed = Some(ed);
                report.keypoint_ed_mean = Some(mean);
            }
            print_json(&report)?;
        }
        Command::Synth {
            angle,
            transform,
            out,
            in_plane,
            deform,
            seed,
            preset,
        } => {
            let base = match preset {
                Preset::Elongated => ForearmParams::default(),
                Preset::PalmDominant => ForearmParams::palm_dominant(),
            };
            let params = ForearmParams {
                axial_angle: angle,
                in_plane_angle: in_plane,
                seed,
                ..base
            };
            let t = parse_transform_spec(&transform, params.canvas_center())?;
            let pair = generate_pair_styled(&params, &t, deform, None)?;
            fs::create_dir_all(&out)?;
            io::save_image(&pair.fixed.image, &out.join("fixed.png"))?;
            io::save_image(&pair.moving.image, &out.join("moving.png"))?;
            io::save_mask(&pair.fixed.mask, &out.join("fixed_mask.pgm"))?;
            io::save_mask(&pair.moving.mask, &out.join("moving_mask.pgm"))?;
            io::write_json(&pair.fixed.keypoints, &out.join("fixed_keypoints.json"))?;
            io::write_json(&pair.moving.keypoints, &out.join("moving_keypoints.json"))?;
            let truth = json!({
                "format_version": FORMAT_VERSION,
                "fixed_to_moving": pair.fixed_to_moving,
                "moving_to_fixed": pair.moving_to_fixed(),
                "deform": deform.map(|amplitude| EdgeBump { amplitude }),
                "params": params,
            });
            io::write_json(&truth, &out.join("transform.json"))?;
            print_json(&truth)?;
        }
        Command::Batch { list, out, config } => {
            let cfg = config_from(config.as_deref())?;
            let text = fs::read_to_string(&list)?;
            let base = list.parent().unwrap_or(Path::new("."));
            let jobs = parse_job_list(&text, base)?;
            let entries = run_batch(&jobs, &cfg, &out)?;
            print_json(&entries)?;
            let failed = entries.iter().filter(|e| e.status != "ok").count();
            if failed > 0 {
                return Err(Failure::Batch(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(format!("{} (format {FORMAT_VERSION})", env!("CARGO_PKG_VERSION")).into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let message: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            return fail(Failure::Usage(message.join(" ").trim_start_matches("error: ").to_string()));
        }
    };
    let result = Cli::from_arg_matches(&matches)
        .map_err(|e| Failure::Usage(e.to_string()))
        .and_then(|cli| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    let (code, body) = f.report();
    eprintln!("{body}");
    ExitCode::from(code)
}
