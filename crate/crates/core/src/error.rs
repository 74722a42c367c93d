use thiserror::Error;

#[derive(Debug, Error)]
pub enum FaciesError {
    #[error("facies code {0} is not in the codebook")]
    UnknownCode(u8),
    #[error("invalid codebook: {0}")]
    Codebook(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

pub type Result<T, E = FaciesError> = std::result::Result<T, E>;
