use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid box {0}")]
    InvalidBox(String),

    #[error("gradient requested at a degenerate predicted box (zero width or height)")]
    DegenerateGradient,

    #[error("gaussian center ({x}, {y}) lies outside the {width}x{height} map")]
    CenterOutOfMap {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("AGS mask has an empty support")]
    EmptySupport,

    #[error("batch norm in training mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),

    #[error("layer `{0}` has a dynamic shape; FLOPs need static shapes")]
    DynamicShape(String),

    #[error("detections for image {image} are not sorted by descending score")]
    UnsortedDetections { image: usize },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("annotation {annotation_id} references unknown image {image_id}")]
    UnknownImage { annotation_id: u64, image_id: u64 },

    #[error("annotation {annotation_id} references unknown category {category_id}")]
    UnknownCategory { annotation_id: u64, category_id: u64 },

    #[error("annotation {annotation_id} box {bbox:?} falls outside image {image_id} ({width}x{height})")]
    BoxOutOfBounds {
        annotation_id: u64,
        image_id: u64,
        bbox: [f64; 4],
        width: u32,
        height: u32,
    },

    #[error("duplicate image id {0}")]
    DuplicateImageId(u64),

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
