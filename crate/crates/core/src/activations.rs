//! Layer activations and the estimated / concatenated / original dimension
//! calculus.
//!
//! A layer holds `n` samples of a `C x H x W` activation. Each feature map
//! (channel) yields an `(H·W) x n` matrix. The *estimated* dimension of a map
//! selection is the sum of the per-map drop dimensions; the *concatenated*
//! dimension is the drop dimension of those maps stacked vertically; the
//! *original* dimension is the concatenated dimension over every map.
//!
//! Fully connected layers use `C = 1, H = units, W = 1`, so all three notions
//! coincide.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{singular_values, LinalgError, Matrix, SingularSpectrum};
use crate::spectrum::{detect_drop, DropReport, SpectrumError, Theta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActivationError {
    #[error("layer '{layer}': data length {len} does not match n={n}, C={c}, H={h}, W={w}")]
    ShapeMismatch { layer: String, len: usize, n: usize, c: usize, h: usize, w: usize },
    #[error("layer '{layer}': every extent must be positive")]
    EmptyExtent { layer: String },
    #[error("layer '{layer}': non-finite activation at flat index {index}")]
    NonFinite { layer: String, index: usize },
    #[error("feature map index {index} out of range for {channels} channels")]
    MapOutOfRange { index: usize, channels: usize },
    #[error("feature map {0} selected more than once")]
    DuplicateMap(usize),
    #[error("no feature maps selected")]
    EmptySelection,
    #[error("map matrices must all be {expected_rows}x{expected_cols}")]
    MapShape { expected_rows: usize, expected_cols: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// `n` samples of one layer's output, indexed `[sample][channel][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    layer_name: String,
    height: usize,
    width: usize,
    channels: usize,
    cluster_size: usize,
    data: Vec<f64>,
}

impl LayerActivations {
    pub fn new(
        layer_name: impl Into<String>,
        cluster_size: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, ActivationError> {
        let layer = layer_name.into();
        if cluster_size == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(ActivationError::EmptyExtent { layer });
        }
        let expected = [cluster_size, channels, height, width]
            .iter()
            .try_fold(1usize, |acc, &x| acc.checked_mul(x));
        if expected != Some(data.len()) {
            return Err(ActivationError::ShapeMismatch {
                layer,
                len: data.len(),
                n: cluster_size,
                c: channels,
                h: height,
                w: width,
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(ActivationError::NonFinite { layer, index });
        }
        Ok(Self { layer_name: layer, height, width, channels, cluster_size, data })
    }

    /// A fully connected layer: `C = 1`, `H = units`, `W = 1`.
    /// `data` holds `units` values per sample, sample-major.
    pub fn fully_connected(
        layer_name: impl Into<String>,
        cluster_size: usize,
        units: usize,
        data: Vec<f64>,
    ) -> Result<Self, ActivationError> {
        Self::new(layer_name, cluster_size, 1, units, 1, data)
    }

    /// Builds a layer whose channel `c` has the `(height·width) x n` matrix
    /// `maps[c]`, the inverse of [`feature_map_matrix`].
    pub fn from_map_matrices(
        layer_name: impl Into<String>,
        height: usize,
        width: usize,
        maps: &[Matrix],
    ) -> Result<Self, ActivationError> {
        let first = maps.first().ok_or(ActivationError::EmptySelection)?;
        let hw = height * width;
        let n = first.cols();
        if maps.iter().any(|m| m.rows() != hw || m.cols() != n) {
            return Err(ActivationError::MapShape { expected_rows: hw, expected_cols: n });
        }
        let mut data = Vec::with_capacity(n * maps.len() * hw);
        for s in 0..n {
            for m in maps {
                data.extend((0..hw).map(|r| m.get(r, s)));
            }
        }
        Self::new(layer_name, n, maps.len(), height, width, data)
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn cluster_size(&self) -> usize {
        self.cluster_size
    }

    /// Activation-space dimension `D = H·W·C`.
    pub fn activation_dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn map_size(&self) -> usize {
        self.height * self.width
    }

    /// Flat values in `[sample][channel][row][col]` order.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        let d = self.activation_dim();
        &self.data[s * d..(s + 1) * d]
    }

    /// The first `count` samples, as a nested sub-cluster.
    pub fn leading_samples(&self, count: usize) -> Result<Self, ActivationError> {
        let count = count.min(self.cluster_size);
        let d = self.activation_dim();
        Self::new(
            self.layer_name.clone(),
            count,
            self.channels,
            self.height,
            self.width,
            self.data[..count * d].to_vec(),
        )
    }

    /// Keeps only the samples at `indices`, in that order.
    pub fn select_samples(&self, indices: &[usize]) -> Result<Self, ActivationError> {
        let d = self.activation_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Self::new(self.layer_name.clone(), indices.len(), self.channels, self.height, self.width, data)
    }
}

fn check_map(acts: &LayerActivations, index: usize) -> Result<(), ActivationError> {
    if index >= acts.channels {
        Err(ActivationError::MapOutOfRange { index, channels: acts.channels })
    } else {
        Ok(())
    }
}

fn check_selection(acts: &LayerActivations, indices: &[usize]) -> Result<(), ActivationError> {
    if indices.is_empty() {
        return Err(ActivationError::EmptySelection);
    }
    let mut seen = HashSet::with_capacity(indices.len());
    for &i in indices {
        check_map(acts, i)?;
        if !seen.insert(i) {
            return Err(ActivationError::DuplicateMap(i));
        }
    }
    Ok(())
}

/// `(H·W) x n` matrix of one feature map; column `s` is sample `s`'s map
/// flattened row-major.
pub fn feature_map_matrix(acts: &LayerActivations, map_index: usize) -> Result<Matrix, ActivationError> {
    check_map(acts, map_index)?;
    Ok(stacked_maps(acts, &[map_index])?)
}

/// Vertical stack of the selected maps: `(k·H·W) x n`.
pub fn concatenate_maps(acts: &LayerActivations, map_indices: &[usize]) -> Result<Matrix, ActivationError> {
    check_selection(acts, map_indices)?;
    Ok(stacked_maps(acts, map_indices)?)
}

fn stacked_maps(acts: &LayerActivations, map_indices: &[usize]) -> Result<Matrix, LinalgError> {
    let hw = acts.map_size();
    let n = acts.cluster_size;
    let rows = hw * map_indices.len();
    let mut data = vec![0.0; rows * n];
    for s in 0..n {
        let sample = acts.sample(s);
        for (block, &c) in map_indices.iter().enumerate() {
            let map = &sample[c * hw..(c + 1) * hw];
            for (r, &v) in map.iter().enumerate() {
                data[(block * hw + r) * n + s] = v;
            }
        }
    }
    Matrix::new(rows, n, data)
}

/// Every map index of a layer, in order.
pub fn all_maps(acts: &LayerActivations) -> Vec<usize> {
    (0..acts.channels).collect()
}

/// Per-layer dimension results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub layer_name: String,
    /// `H·W·C` of the layer.
    pub activation_dim: usize,
    pub map_indices: Vec<usize>,
    pub per_map_dimensions: Vec<usize>,
    pub estimated: usize,
    pub concatenated: Option<usize>,
    pub original: Option<usize>,
    pub theta: f64,
    pub cluster_size: usize,
    pub centered: bool,
}

/// Drop threshold plus the optional mean-centering applied before each SVD.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Estimator {
    pub theta: Theta,
    pub center: bool,
}

impl Estimator {
    pub fn new(theta: Theta) -> Self {
        Self { theta, center: false }
    }

    pub fn centered(mut self, center: bool) -> Self {
        self.center = center;
        self
    }

    pub fn spectrum_of(&self, m: &Matrix) -> Result<SingularSpectrum, ActivationError> {
        let s = if self.center {
            singular_values(&m.center_columns())?
        } else {
            singular_values(m)?
        };
        Ok(s)
    }

    pub fn drop_of(&self, m: &Matrix) -> Result<DropReport, ActivationError> {
        Ok(detect_drop(&self.spectrum_of(m)?, self.theta)?)
    }

    pub fn map_dimension(&self, acts: &LayerActivations, map_index: usize) -> Result<usize, ActivationError> {
        Ok(self.drop_of(&feature_map_matrix(acts, map_index)?)?.dimension)
    }

    /// Per-map dimensions in selection order, computed in parallel.
    pub fn per_map_dimensions(
        &self,
        acts: &LayerActivations,
        map_indices: &[usize],
    ) -> Result<Vec<usize>, ActivationError> {
        check_selection(acts, map_indices)?;
        map_indices
            .par_iter()
            .map(|&i| self.map_dimension(acts, i))
            .collect()
    }

    pub fn estimated_dimension(
        &self,
        acts: &LayerActivations,
        map_indices: &[usize],
    ) -> Result<DimensionSummary, ActivationError> {
        let per_map = self.per_map_dimensions(acts, map_indices)?;
        Ok(DimensionSummary {
            layer_name: acts.layer_name.clone(),
            activation_dim: acts.activation_dim(),
            map_indices: map_indices.to_vec(),
            estimated: per_map.iter().sum(),
            per_map_dimensions: per_map,
            concatenated: None,
            original: None,
            theta: self.theta.get(),
            cluster_size: acts.cluster_size,
            centered: self.center,
        })
    }

    pub fn concatenated_dimension(
        &self,
        acts: &LayerActivations,
        map_indices: &[usize],
    ) -> Result<usize, ActivationError> {
        Ok(self.drop_of(&concatenate_maps(acts, map_indices)?)?.dimension)
    }

    pub fn original_dimension(&self, acts: &LayerActivations) -> Result<usize, ActivationError> {
        self.concatenated_dimension(acts, &all_maps(acts))
    }

    /// Estimated dimension over `map_indices`, plus the concatenated and
    /// original dimensions when requested.
    pub fn summarize(
        &self,
        acts: &LayerActivations,
        map_indices: &[usize],
        concatenated: bool,
        original: bool,
    ) -> Result<DimensionSummary, ActivationError> {
        let mut summary = self.estimated_dimension(acts, map_indices)?;
        if concatenated {
            summary.concatenated = Some(self.concatenated_dimension(acts, map_indices)?);
        }
        if original {
            let all = all_maps(acts);
            summary.original = match summary.concatenated {
                Some(c) if map_indices == all.as_slice() => Some(c),
                _ => Some(self.original_dimension(acts)?),
            };
        }
        Ok(summary)
    }
}

pub fn estimated_dimension(
    acts: &LayerActivations,
    map_indices: &[usize],
    theta: Theta,
) -> Result<DimensionSummary, ActivationError> {
    Estimator::new(theta).estimated_dimension(acts, map_indices)
}

pub fn concatenated_dimension(
    acts: &LayerActivations,
    map_indices: &[usize],
    theta: Theta,
) -> Result<usize, ActivationError> {
    Estimator::new(theta).concatenated_dimension(acts, map_indices)
}

pub fn original_dimension(acts: &LayerActivations, theta: Theta) -> Result<usize, ActivationError> {
    Estimator::new(theta).original_dimension(acts)
}
