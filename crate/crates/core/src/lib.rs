//! Structure-based multi-modal forearm registration.
//!
//! A limb mask is segmented from the Cr channel, rotated so the limb lies
//! along the x-axis, and summarized by its per-column foreground count (the
//! forearm feature representation curve). The wrist valley and the distal
//! end of that curve anchor a fixed number of edge keypoints, which match
//! index-wise between two images and drive an affine (FAM) or thin-plate
//! spline (FAM-TPS) registration.

pub mod config;
pub mod error;
pub mod ffrc;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod orientation;
pub mod pipeline;
pub mod raster;
pub mod registration;
pub mod segmentation;
pub mod synthgen;

pub use config::{load_config, Mode, PipelineConfig, WindowSize};
pub use error::{Error, Result};
pub use ffrc::{FeatureCurve, KalmanParams, KeypointSet};
pub use geometry::{AffineTransform, Point};
pub use metrics::RegistrationReport;
pub use orientation::{OrientationMethod, PrincipalDirection};
pub use pipeline::{run_batch, run_pipeline, PipelineOutput};
pub use raster::{BinaryMask, Image};
pub use registration::{MatchedPairs, TpsWarp, Warp};
