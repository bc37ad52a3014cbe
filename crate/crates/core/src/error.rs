use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {actual_w}x{actual_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("matte for frame {index} not found at {}", path.display())]
    MissingMatte { index: String, path: PathBuf },

    #[error("{}: expected a single-channel image, found {channels} channels", path.display())]
    ChannelCount { path: PathBuf, channels: u8 },

    #[error("frame {index}: size changed from {expected_w}x{expected_h} to {actual_w}x{actual_h}")]
    FrameSizeChanged {
        index: usize,
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },

    #[error("frame {index}: {message}")]
    Frame { index: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn mismatch(expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected_w: expected.0,
            expected_h: expected.1,
            actual_w: actual.0,
            actual_h: actual.1,
        }
    }
}
