use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "city map generation failed after {rounds} rounds \
         (size {size_px}, {n_buildings} buildings, sides {min_side}..={max_side})"
    )]
    MapGeneration {
        rounds: usize,
        size_px: usize,
        n_buildings: usize,
        min_side: usize,
        max_side: usize,
    },

    #[error("requested {requested} points but the map has only {available} exterior cells")]
    NotEnoughExterior { requested: usize, available: usize },

    #[error("car placement failed: {placed} of {requested} cars placed after {attempts} attempts")]
    CarPlacement {
        requested: usize,
        placed: usize,
        attempts: usize,
    },

    #[error("pixel ({x}, {y}) lies inside a building")]
    InsideBuilding { x: usize, y: usize },

    #[error("pixel ({x}, {y}) is outside the {size}x{size} grid")]
    OutOfGrid { x: usize, y: usize, size: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty fingerprint database")]
    EmptyDatabase,

    #[error("anchors are collinear; the range system is rank deficient")]
    CollinearAnchors,

    #[error("degenerate heat map: |sum| = {sum:e} is below {eps:e}")]
    DegenerateHeatMap { sum: f64, eps: f64 },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("simulation failed for scene {scene}: {source}")]
    Scene {
        scene: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("png encoding: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("png decoding: {0}")]
    PngDecode(#[from] png::DecodingError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
