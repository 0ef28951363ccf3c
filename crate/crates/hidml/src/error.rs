//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying I/O failure while reading or writing files.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A structural problem in an input file (ragged row, bad sparse index, ...).
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    /// A field that could not be parsed as a number or label.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// The input file contained no examples.
    #[error("empty dataset: file contains no examples")]
    EmptyDataset,

    /// A configuration value outside its documented range.
    #[error("config error: {0}")]
    Config(String),

    /// Two objects whose dimensions must agree do not.
    #[error("dimension mismatch: {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// An example index outside `[0, n)`.
    #[error("index {index} out of range for {n} examples")]
    IndexOutOfRange { index: usize, n: usize },

    /// Stratified splitting needs at least two examples per class.
    #[error("cannot stratify: class {class} has a single example")]
    Stratification { class: usize },

    /// The optimizer produced a non-finite value.
    #[error("divergence at SGD step {step}: objective became non-finite")]
    Divergence { step: usize },

    /// A diagnostic routine was asked to materialize something too large.
    #[error("size limit exceeded: {what} is {got}, limit {limit}")]
    SizeLimit {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    /// An iterative numerical routine failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A malformed or incompatible model file.
    #[error("model file error: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, Error>;
