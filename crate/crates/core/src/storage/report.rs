//! Dimension reports and singular value tables, as JSON or CSV.
//!
//! Report CSV columns, one row per layer:
//! `layer,activation_dim,cluster_size,theta,centered,map_count,map_indices,per_map_dimensions,estimated,concatenated,original`
//! where list columns are `;`-separated and absent values are empty.
//!
//! Spectrum CSV columns, one row per singular value:
//! `layer,map_index,index,sigma,log10_sigma` (`index` is 1-based).

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::StorageError;
use crate::activations::DimensionSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = StorageError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(StorageError::UnsupportedFormat(other.to_owned())),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

/// Singular values of one feature map (or of a whole fully connected layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpectrum {
    pub layer: String,
    pub map_index: usize,
    pub singular_values: Vec<f64>,
    pub log10: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DimensionReport {
    pub layers: Vec<DimensionSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spectra: Vec<MapSpectrum>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    layer: &'a str,
    activation_dim: usize,
    cluster_size: usize,
    theta: f64,
    centered: bool,
    map_count: usize,
    map_indices: String,
    per_map_dimensions: String,
    estimated: usize,
    concatenated: Option<usize>,
    original: Option<usize>,
}

#[derive(Serialize)]
struct SpectrumRow<'a> {
    layer: &'a str,
    map_index: usize,
    index: usize,
    sigma: f64,
    log10_sigma: f64,
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn csv_err(e: impl fmt::Display) -> StorageError {
    StorageError::Csv(e.to_string())
}

const SUMMARY_HEADER: [&str; 11] = [
    "layer",
    "activation_dim",
    "cluster_size",
    "theta",
    "centered",
    "map_count",
    "map_indices",
    "per_map_dimensions",
    "estimated",
    "concatenated",
    "original",
];

const SPECTRUM_HEADER: [&str; 5] = ["layer", "map_index", "index", "sigma", "log10_sigma"];

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String, StorageError> {
    let bytes = w.into_inner().map_err(csv_err)?;
    String::from_utf8(bytes).map_err(csv_err)
}

impl DimensionReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, StorageError> {
        serde_json::from_str(text).map_err(|e| StorageError::Json(e.to_string()))
    }

    /// Layer summaries as CSV. Spectra are rendered by [`Self::spectra_csv`].
    pub fn summary_csv(&self) -> Result<String, StorageError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
        for s in &self.layers {
            w.serialize(SummaryRow {
                layer: &s.layer_name,
                activation_dim: s.activation_dim,
                cluster_size: s.cluster_size,
                theta: s.theta,
                centered: s.centered,
                map_count: s.map_indices.len(),
                map_indices: join(&s.map_indices),
                per_map_dimensions: join(&s.per_map_dimensions),
                estimated: s.estimated,
                concatenated: s.concatenated,
                original: s.original,
            })
            .map_err(csv_err)?;
        }
        into_string(w)
    }

    pub fn spectra_csv(&self) -> Result<String, StorageError> {
        spectra_to_csv(&self.spectra)
    }

    pub fn render(&self, format: ReportFormat) -> Result<String, StorageError> {
        match format {
            ReportFormat::Json => Ok(self.to_json()),
            ReportFormat::Csv => self.summary_csv(),
        }
    }
}

pub fn spectra_to_csv(spectra: &[MapSpectrum]) -> Result<String, StorageError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(SPECTRUM_HEADER).map_err(csv_err)?;
    for m in spectra {
        for (i, (&sigma, &log)) in m.singular_values.iter().zip(&m.log10).enumerate() {
            w.serialize(SpectrumRow {
                layer: &m.layer,
                map_index: m.map_index,
                index: i + 1,
                sigma,
                log10_sigma: log,
            })
            .map_err(csv_err)?;
        }
    }
    into_string(w)
}

pub fn spectra_to_json(spectra: &[MapSpectrum]) -> String {
    let mut s = serde_json::to_string_pretty(spectra).expect("spectra serialize");
    s.push('\n');
    s
}

/// Writes the report to `path`. For CSV with spectra attached, the spectra go
/// to a sibling file with the extension `spectra.csv`.
pub fn write_report(report: &DimensionReport, format: ReportFormat, path: &Path) -> Result<(), StorageError> {
    fs::write(path, report.render(format)?).map_err(|e| StorageError::io(path, e))?;
    if format == ReportFormat::Csv && !report.spectra.is_empty() {
        let side = path.with_extension("spectra.csv");
        fs::write(&side, report.spectra_csv()?).map_err(|e| StorageError::io(&side, e))?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<DimensionReport, StorageError> {
    let text = fs::read_to_string(path).map_err(|e| StorageError::io(path, e))?;
    DimensionReport::from_json(&text)
}
