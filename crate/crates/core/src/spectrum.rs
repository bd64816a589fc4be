//! Drop detection: turning a singular spectrum into a dimension estimate.
//!
//! The estimate is the first index `j` (1-based) where `σ_j / σ_{j+1}`
//! exceeds a large threshold θ. When no such gap exists the cluster spans
//! the whole space the spectrum lives in.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SingularSpectrum;

/// Default drop threshold.
pub const DEFAULT_THETA: f64 = 1e5;

/// log₁₀ reported for an exact zero singular value.
pub const LOG_ZERO_SENTINEL: f64 = -320.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("drop threshold must be a finite number greater than 1 (got {0})")]
    InvalidTheta(f64),
    #[error("cannot detect a drop in an empty spectrum")]
    EmptySpectrum,
}

/// Drop threshold θ > 1.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Theta(f64);

impl Theta {
    pub fn new(value: f64) -> Result<Self, SpectrumError> {
        if value.is_finite() && value > 1.0 {
            Ok(Self(value))
        } else {
            Err(SpectrumError::InvalidTheta(value))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Theta {
    fn default() -> Self {
        Self(DEFAULT_THETA)
    }
}

impl TryFrom<f64> for Theta {
    type Error = SpectrumError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Theta> for f64 {
    fn from(t: Theta) -> f64 {
        t.0
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropReport {
    pub dimension: usize,
    /// 1-based `j` of the drop.
    pub drop_index: Option<usize>,
    /// `σ_j / σ_{j+1}`; infinite when `σ_{j+1}` is exactly zero.
    pub drop_ratio: Option<f64>,
    pub theta: Theta,
    pub full_space: bool,
    pub log_values: Vec<f64>,
}

impl DropReport {
    /// All-zero spectrum: dimension 0, no drop, not full-space.
    pub fn is_degenerate(&self) -> bool {
        !self.full_space && self.drop_index.is_none()
    }
}

pub fn detect_drop(spectrum: &SingularSpectrum, theta: Theta) -> Result<DropReport, SpectrumError> {
    if spectrum.is_empty() {
        return Err(SpectrumError::EmptySpectrum);
    }
    let values = spectrum.values();
    let log_values = log_spectrum(spectrum);

    if spectrum.largest() == 0.0 {
        return Ok(DropReport {
            dimension: 0,
            drop_index: None,
            drop_ratio: None,
            theta,
            full_space: false,
            log_values,
        });
    }

    let drop = values.windows(2).enumerate().find_map(|(i, w)| {
        let ratio = drop_ratio(w[0], w[1]);
        (ratio > theta.get()).then_some((i + 1, ratio))
    });

    Ok(match drop {
        Some((j, ratio)) => DropReport {
            dimension: j,
            drop_index: Some(j),
            drop_ratio: Some(ratio),
            theta,
            full_space: false,
            log_values,
        },
        None => DropReport {
            dimension: values.len(),
            drop_index: None,
            drop_ratio: None,
            theta,
            full_space: true,
            log_values,
        },
    })
}

/// `upper / lower`, with a positive value over zero counted as infinite and
/// zero over zero as no drop at all.
fn drop_ratio(upper: f64, lower: f64) -> f64 {
    if lower == 0.0 {
        if upper > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        upper / lower
    }
}

/// Elementwise log₁₀; exact zeros map to [`LOG_ZERO_SENTINEL`].
pub fn log_spectrum(spectrum: &SingularSpectrum) -> Vec<f64> {
    spectrum
        .values()
        .iter()
        .map(|&v| if v == 0.0 { LOG_ZERO_SENTINEL } else { v.log10() })
        .collect()
}
