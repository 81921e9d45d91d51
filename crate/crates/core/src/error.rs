use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),

    #[error("triplet is collinear (triangle area {area:.3e} m^2)")]
    CollinearTriplet { area: f64 },

    #[error("invalid depth {depth} at pixel ({u}, {v})")]
    InvalidDepth { u: f64, v: f64, depth: f64 },

    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("no dominant plane found (inlier fraction {0:.3})")]
    NoPlaneFound(f64),

    #[error("mask has no positive pixels")]
    EmptyMask,

    #[error("contact pixel ({0}, {1}) does not hit any object")]
    ContactMiss(usize, usize),

    #[error("scene parse error at line {line}: {msg}")]
    SceneParse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {kind} file {path}: {msg}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        msg: String,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
