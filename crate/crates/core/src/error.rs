use std::io;

use thiserror::Error;

/// Errors produced anywhere in the tiling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("window ({x0}, {y0}, {w}x{h}) lies outside the {width}x{height} raster")]
    OutOfBounds {
        x0: i64,
        y0: i64,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("reflect overhang {overhang} is not smaller than the raster dimension {dim}")]
    UnsupportedReflect { overhang: usize, dim: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("netspec line {line}: {msg}")]
    Spec { line: usize, msg: String },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("weights error: {0}")]
    Weights(String),
    #[error("plan error: {0}")]
    Plan(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn spec(line: usize, msg: impl Into<String>) -> Self {
        Error::Spec { line, msg: msg.into() }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }

    pub(crate) fn plan(msg: impl Into<String>) -> Self {
        Error::Plan(msg.into())
    }
}
