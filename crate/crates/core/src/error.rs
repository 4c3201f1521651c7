use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("image for id {id:?} not found at {path}")]
    MissingImage { id: String, path: PathBuf },

    #[error("cannot decode image for id {id:?}: {source}")]
    Image {
        id: String,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("unknown id {0:?}")]
    UnknownId(String),

    #[error("bad IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("IDX count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("truncated payload in {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("score {value} at ({row:?}, {col:?}) is outside [0, 5]")]
    ScoreOutOfRange { row: String, col: String, value: f64 },

    #[error("matrix is asymmetric at ({row:?}, {col:?}): {forward} vs {backward}")]
    Asymmetric {
        row: String,
        col: String,
        forward: f64,
        backward: f64,
    },

    #[error("diagonal entry for {id:?} is {value}, expected 5")]
    Diagonal { id: String, value: f64 },

    #[error("malformed similarity matrix: {0}")]
    MatrixFormat(String),

    #[error("record {0:?} has no class label")]
    MissingLabel(String),

    #[error("split leaves an empty partition ({train} train / {query} query)")]
    EmptyPartition { train: usize, query: usize },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("image {id:?} has resolution {found:?} but the corpus requires {expected:?} and resizing is disabled")]
    Resolution {
        id: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("no edge map for id {id:?} in {dir}")]
    MissingEdgeMap { id: String, dir: PathBuf },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("no qualifying triplets ({skipped} anchors skipped)")]
    NoTriplets { skipped: usize },

    #[error("zero vector under cosine similarity")]
    ZeroVector,

    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },

    #[error("image of {found:?} is smaller than the {grid}x{grid} lattice requires ({needed} pixels per side)")]
    TooSmall {
        grid: usize,
        needed: usize,
        found: (usize, usize),
    },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage {stage:?} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::InvalidConfig(message.into())
    }
}
