use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants carry enough context (module, coordinates, iteration) to be
/// surfaced directly by the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("series too short: {len} raw periods cannot support lag span {span}")]
    SeriesTooShort { len: usize, span: usize },

    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("value {value} outside support [{lower}, {upper}] for {param}")]
    OutOfSupport {
        param: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown hyperparameter profile `{0}` (expected lorenz, sst or unemployment)")]
    UnknownProfile(String),

    #[error("numerical failure at iteration {iteration}: {reason}")]
    Numerical { iteration: usize, reason: String },

    #[error("lorenz-96 integration blew up at step {step} (|state| = {magnitude:e})")]
    BlowUp { step: usize, magnitude: f64 },

    #[error("invalid split: test length {test_len} with {total} periods")]
    InvalidSplit { test_len: usize, total: usize },

    #[error("empty sample set")]
    EmptySamples,

    #[error("empty region mask")]
    EmptyRegion,

    #[error("no grid point is feasible for a series of {len} periods")]
    GridInfeasible { len: usize },

    #[error("zero-variance column `{0}` cannot be standardized")]
    ZeroVariance(String),

    #[error("insufficient input history: need input index {needed}, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("{path}: row {row}, column {column}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        reason: String,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Tags the error with the name of the module that produced it.
    pub fn in_module(self, module: &'static str) -> Self {
        match self {
            e @ Error::Module { .. } => e,
            e => Error::Module {
                module,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
