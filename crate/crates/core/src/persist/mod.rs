//! Model files and datasets.

mod dataset;
mod model_file;

pub use dataset::{
    generate_blobs, generate_blobs_with_features, load_csv, CsvSchema, Dataset, DatasetSource,
};
pub use model_file::{
    decode_model, encode_model, fnv1a64, load_model, save_model, save_model_atomic, MAGIC,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nnengine::NnError;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("truncated model file: need {needed} bytes, have {actual}")]
    Truncated { needed: usize, actual: usize },
    #[error("model file is {actual} bytes, header declares {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("unknown layer tag {tag} for layer {layer}")]
    UnknownTag { tag: u8, layer: usize },
    #[error("invalid model: {0}")]
    InvalidModel(#[from] NnError),
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("missing label column: last header must be '{expected}'")]
    MissingLabelColumn { expected: String },
    #[error("row {row} has {found} columns, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("cannot parse '{value}' at row {row}, column {column}")]
    CsvParse {
        row: usize,
        column: usize,
        value: String,
    },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
}

impl PersistError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PersistError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn csv(path: &Path, err: csv::Error) -> Self {
        PersistError::Csv {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PersistError>;
