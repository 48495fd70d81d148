use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected {expected}-channel image, got {actual} channels")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("size error: {0}")]
    Size(String),

    #[error("degenerate histogram: fewer than two populated intensity levels")]
    DegenerateHistogram,

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no valley candidate found in the feature curve")]
    NoValley,

    #[error("sampled column {column} contains no foreground")]
    MaskGap { column: usize },

    #[error("matching error: {0}")]
    Matching(String),

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("duplicate control point at ({x}, {y})")]
    DuplicatePoint { x: f64, y: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("transform is not invertible")]
    SingularTransform,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("point set is empty")]
    EmptySet,

    #[error("silhouette does not fit the canvas: {0}")]
    Fit(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config value out of range for `{field}`: {message}")]
    ConfigRange { field: String, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        /// Outermost stage first, e.g. `moving/mask`.
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable kind. For stage errors this is the kind of the
    /// underlying cause.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ChannelMismatch { .. } => "channel_mismatch",
            Error::Size(_) => "size",
            Error::DegenerateHistogram => "degenerate_histogram",
            Error::EmptyMask => "empty_mask",
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::NoValley => "no_valley",
            Error::MaskGap { .. } => "mask_gap",
            Error::Matching(_) => "matching",
            Error::DegenerateConfiguration(_) => "degenerate_configuration",
            Error::DuplicatePoint { .. } => "duplicate_point",
            Error::SingularSystem(_) => "singular_system",
            Error::SingularTransform => "singular_transform",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::EmptySet => "empty_set",
            Error::Fit(_) => "fit",
            Error::ConfigParse { .. } => "config_parse",
            Error::ConfigRange { .. } => "config_range",
            Error::Stage { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Codec(_) => "codec",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code, distinct per error kind. Zero is never returned.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ChannelMismatch { .. } => 10,
            Error::Size(_) => 11,
            Error::DegenerateHistogram => 12,
            Error::EmptyMask => 13,
            Error::DegenerateGeometry(_) => 14,
            Error::InvalidParameter { .. } => 15,
            Error::NoValley => 16,
            Error::MaskGap { .. } => 17,
            Error::Matching(_) => 18,
            Error::DegenerateConfiguration(_) => 19,
            Error::DuplicatePoint { .. } => 20,
            Error::SingularSystem(_) => 21,
            Error::SingularTransform => 22,
            Error::UndefinedMetric(_) => 23,
            Error::EmptySet => 24,
            Error::Fit(_) => 25,
            Error::ConfigParse { .. } => 26,
            Error::ConfigRange { .. } => 27,
            Error::Stage { source, .. } => source.exit_code(),
            Error::Io(_) => 30,
            Error::Codec(_) => 31,
            Error::Json(_) => 32,
        }
    }

    pub fn stage(&self) -> Option<&str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

/// Attaches a pipeline stage name to an error.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            Error::Stage { stage: inner, source } => Error::Stage {
                stage: format!("{stage}/{inner}"),
                source,
            },
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        })
    }
}
