use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh is not watertight ({0} boundary or non-manifold edges)")]
    NotWatertight(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("mesh parse error at line {line}: {msg}")]
    MeshParse { line: usize, msg: String },

    #[error("instance {0} has no occupied leaves")]
    EmptyTarget(u32),

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("placement failed after {0} consecutive rejections")]
    PlacementFailed(usize),

    #[error("optimization diverged at iteration {iter} (loss {loss}, initial {initial})")]
    Diverged { iter: usize, loss: f64, initial: f64 },

    #[error("instance id mismatch: {0}")]
    IdMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
