use std::io;

use thiserror::Error;

/// Errors produced by the frequency-decomposition toolkit.
#[derive(Debug, Error)]
pub enum FdpError {
    #[error("empty volume")]
    EmptyVolume,
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload")]
    TruncatedPayload,
    #[error("dim overflow")]
    DimOverflow,
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("pixel out of range: {0}")]
    OutOfRange(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("dim mismatch: {0}")]
    DimMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate data")]
    DegenerateData,
    #[error("zero variance")]
    ZeroVariance,
    #[error("undefined AUROC")]
    UndefinedAuroc,
    #[error("undefined AUPRC")]
    UndefinedAuprc,
    #[error("empty lesions")]
    EmptyLesions,
    #[error("degenerate lesion")]
    DegenerateLesion,
    #[error("cannot place lesion inside brain")]
    LesionPlacement,
    #[error("zero neighbor distance")]
    ZeroNeighborDistance,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = FdpError> = std::result::Result<T, E>;
