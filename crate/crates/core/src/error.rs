use thiserror::Error;

use crate::stagekin::TabAngles;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} out of range: {value} not in [{min}, {max}]")]
    Range {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("markers leave the frame: indices {0:?}")]
    MarkersOutOfFrame(Vec<usize>),

    #[error("no calibration frames supplied")]
    NoCalibrationFrames,

    #[error("calibration frame {0} carries no truth depth")]
    MissingTruth(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("detected {found} markers, expected {expected}")]
    MarkerCount { expected: usize, found: usize },

    #[error("only {found} trusted markers, need at least {needed}")]
    InsufficientTrusted { found: usize, needed: usize },

    #[error("degenerate marker set: {0}")]
    Degenerate(&'static str),

    #[error("insufficient samples for tab {tab}: {found} < {needed}")]
    InsufficientSamples {
        tab: usize,
        found: usize,
        needed: usize,
    },

    #[error("rank-deficient design matrix for tab {0}")]
    RankDeficient(usize),

    #[error("sample {0} actuates more than one tab")]
    MultiTabSample(usize),

    #[error(
        "target outside stage workspace: residual {translation_mm:.4} mm / {rotation_deg:.4} deg"
    )]
    Workspace {
        best: TabAngles,
        translation_mm: f64,
        rotation_deg: f64,
    },

    #[error("sampling grid point {index} at ({x:.2}, {y:.2}) lies outside the frame")]
    GridOutOfFrame { index: usize, x: f64, y: f64 },

    #[error("servo channel {0} out of range")]
    Channel(usize),

    #[error("pulse {0} quarter-us outside safety bounds")]
    Pulse(u32),

    #[error("malformed command bytes: {0}")]
    Command(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("malformed sequence at frame {frame}: {reason}")]
    Sequence { frame: usize, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
