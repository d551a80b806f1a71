use thiserror::Error;

use crate::bitstream::StreamError;
use crate::image_io::ImageError;
use crate::metrics::MetricsError;
use crate::prob_model::ModelError;
use crate::range_coder::CoderError;
use crate::tokenizer::TokenizerError;

/// Any failure surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Coder(#[from] CoderError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// True when the input bytes are damaged or inconsistent, as opposed to a
    /// caller mistake.
    pub fn is_corruption(&self) -> bool {
        match self {
            Error::Coder(CoderError::Exhausted { .. } | CoderError::Corrupt(_)) => true,
            Error::Stream(e) => !matches!(e, StreamError::CodebookMismatch { .. }),
            Error::Tokenizer(TokenizerError::Corrupt { .. } | TokenizerError::Format(_)) => true,
            Error::Image(ImageError::Parse { .. }) => true,
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
