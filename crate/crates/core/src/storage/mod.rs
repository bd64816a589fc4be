//! On-disk formats: ACTV activation tensors, PPM images, run manifests and
//! dimension reports. Byte-level layouts are documented in `docs/FORMATS.md`.

mod actv;
mod manifest;
mod ppm;
mod report;

use std::path::Path;

use thiserror::Error;

use crate::activations::ActivationError;

pub use actv::{decode_activations, encode_activations, read_activations, write_activations, Dtype, FORMAT_VERSION, MAGIC};
pub use manifest::{ActivationEntry, NetworkRef, RunManifest, MANIFEST_VERSION};
pub use ppm::{decode_ppm, encode_ppm, read_image, write_image};
pub use report::{
    read_report, spectra_to_csv, spectra_to_json, write_report, DimensionReport, MapSpectrum, ReportFormat,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StorageError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("not an ACTV file (bad magic)")]
    BadMagic,
    #[error("unsupported ACTV format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown ACTV dtype code {0}")]
    UnknownDtype(u8),
    #[error("ACTV rank must be 4, found {0}")]
    BadRank(u8),
    #[error("ACTV header is truncated")]
    TruncatedHeader,
    #[error("ACTV payload truncated: expected {expected} bytes, found {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("ACTV file has {0} bytes after the payload")]
    TrailingBytes(usize),
    #[error("ACTV dimensions overflow")]
    DimensionOverflow,
    #[error("layer name is not valid UTF-8")]
    InvalidLayerName,
    #[error("layer name of {0} bytes does not fit the header")]
    NameTooLong(usize),
    #[error("unsupported image format: {0}")]
    UnsupportedImage(String),
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("unsupported report format '{0}'")]
    UnsupportedFormat(String),
    #[error("JSON: {0}")]
    Json(String),
    #[error("CSV: {0}")]
    Csv(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Activation(#[from] ActivationError),
}

impl StorageError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        StorageError::Io { path: path.display().to_string(), message: err.to_string() }
    }
}
