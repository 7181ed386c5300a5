// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

use crate::types::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid category table: {0}")]
    InvalidCategories(String),

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("invalid sequence: {}", join_violations(.0))]
    InvalidSequence(Vec<Violation>),

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("id {0} exceeds 24-bit range")]
    IdOutOfRange(u32),

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("non-finite logit at element {0}")]
    NonFiniteLogit(usize),

    #[error("non-finite weight in tensor '{0}'")]
    NonFiniteWeight(String),

    #[error("unknown class id {0}")]
    UnknownClass(u32),

    #[error("unknown category {0}")]
    UnknownCategory(u32),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("duplicate tensor name '{0}'")]
    DuplicateTensor(String),

    #[error("tensor '{name}': shape {shape:?} needs {expected} values, found {found}")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("tensor '{0}' does not match the first snapshot")]
    SnapshotMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("video '{0}' is missing from the {1} set")]
    MissingVideo(String, &'static str),

    #[error("no videos to evaluate")]
    NoVideos,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("no thing tracks in ground truth; association quality is undefined")]
    UndefinedAssociation,
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::File {
            path: path.into(),
            message: message.into(),
        }
    }
}
