use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgnError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("alignment maps the mask outside the base image: {0}")]
    AlignmentOutOfBounds(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("no frame found: thresholding produced an empty mask")]
    EmptySegmentation,

    #[error("rank-deficient least-squares system: {0}")]
    RankDeficient(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, AgnError>;
