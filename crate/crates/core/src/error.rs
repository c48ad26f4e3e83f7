use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("rank {rank} outside 1..={max}")]
    InvalidRank { rank: usize, max: usize },
    #[error("patch size {patch} exceeds image dimensions {rows}x{cols}")]
    PatchTooLarge { patch: usize, rows: usize, cols: usize },
    #[error("patch at ({row}, {col}) does not fit a {rows}x{cols} image")]
    InvalidPosition {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("cluster has no patches")]
    EmptyCluster,
    #[error("pixel ({row}, {col}) is not covered by any patch")]
    CoverageGap { row: usize, col: usize },
    #[error("{clusters} clusters requested for {patches} patches")]
    TooManyClusters { clusters: usize, patches: usize },
    #[error("region has {0} pixels, not enough for this metric")]
    EmptyRegion(usize),
    #[error("intersection over union is undefined for two empty masks")]
    UndefinedIoU,
    #[error("degenerate region: {0}")]
    DegenerateRegion(&'static str),
    #[error("image {rows}x{cols} is smaller than the 3x3 kernel")]
    ImageTooSmall { rows: usize, cols: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("archive format error: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("image decoding failed: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
