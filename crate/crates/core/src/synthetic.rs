//! Ground-truth clusters with a known dimension.
//!
//! [`sample_hyperplane_cluster`] draws points near a d-dimensional linear
//! subspace of ℝ^D; [`sample_independent_blocks`] draws per-map matrices whose
//! row spaces are known to be independent (or, for controls, identical).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyntheticError {
    #[error("invalid hyperplane spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible block ranks: {0}")]
    InfeasibleBlocks(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneSpec {
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    pub cluster_size: usize,
    pub noise_scale: f64,
    pub coefficient_scale: f64,
    pub seed: u64,
}

impl HyperplaneSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |msg: String| Err(SyntheticError::InvalidSpec(msg));
        if self.ambient_dim == 0 || self.cluster_size == 0 {
            return bad("ambient dimension and cluster size must be positive".into());
        }
        if self.intrinsic_dim == 0 {
            return bad("intrinsic dimension must be at least 1".into());
        }
        let cap = self.ambient_dim.min(self.cluster_size);
        if self.intrinsic_dim > cap {
            return bad(format!(
                "intrinsic dimension {} exceeds min(ambient, cluster size) = {cap}",
                self.intrinsic_dim
            ));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad(format!("noise scale must be finite and >= 0 (got {})", self.noise_scale));
        }
        if !(self.coefficient_scale.is_finite() && self.coefficient_scale > 0.0) {
            return bad(format!(
                "coefficient scale must be finite and > 0 (got {})",
                self.coefficient_scale
            ));
        }
        Ok(())
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Result<Matrix, LinalgError> {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// `count` orthonormal vectors of length `dim`, from Gaussian draws by
/// modified Gram-Schmidt with one round of re-orthogonalization.
pub(crate) fn orthonormal_vectors(dim: usize, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let original = norm(&v);
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let len = norm(&v);
        // draw again if the sample was (numerically) inside the current span
        if len > 1e-6 * original {
            v.iter_mut().for_each(|x| *x /= len);
            basis.push(v);
        }
    }
    basis
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `A = B·C + ε·N`: B is `D x d` with orthonormal columns, C is `d x n`
/// Gaussian with the coefficient scale, N is `D x n` unit Gaussian.
pub fn sample_hyperplane_cluster(spec: &HyperplaneSpec) -> Result<Matrix, SyntheticError> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let (big_d, d, n) = (spec.ambient_dim, spec.intrinsic_dim, spec.cluster_size);

    let cols = orthonormal_vectors(big_d, d, &mut rng);
    let basis = Matrix::from_fn(big_d, d, |r, c| cols[c][r])?;
    let coefficients = gaussian_matrix(d, n, spec.coefficient_scale, &mut rng)?;
    let signal = basis.matmul(&coefficients)?;
    if spec.noise_scale == 0.0 {
        return Ok(signal);
    }
    let noise = gaussian_matrix(big_d, n, spec.noise_scale, &mut rng)?;
    Ok(signal.add(&noise)?)
}

/// How the row spaces of generated blocks relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockLayout {
    /// Each block draws from its own slice of a shared orthonormal basis;
    /// the stacked rank is the sum of block ranks.
    Disjoint,
    /// Every block draws from the leading vectors of the same basis; the
    /// stacked rank is the largest block rank.
    Shared,
}

/// `k` matrices of shape `rows_per_block x n`, block `i` of exact rank
/// `block_ranks[i]`. Row spaces come from a random orthonormal basis of ℝⁿ.
pub fn sample_independent_blocks(
    block_ranks: &[usize],
    rows_per_block: usize,
    n: usize,
    layout: BlockLayout,
    seed: u64,
) -> Result<Vec<Matrix>, SyntheticError> {
    let infeasible = |msg: String| Err(SyntheticError::InfeasibleBlocks(msg));
    if block_ranks.is_empty() || rows_per_block == 0 || n == 0 {
        return infeasible("need at least one block, one row and one column".into());
    }
    if let Some(&r) = block_ranks.iter().find(|&&r| r == 0 || r > rows_per_block) {
        return infeasible(format!("block rank {r} must lie in 1..={rows_per_block}"));
    }
    let needed = match layout {
        BlockLayout::Disjoint => block_ranks.iter().sum::<usize>(),
        BlockLayout::Shared => *block_ranks.iter().max().expect("non-empty"),
    };
    if needed > n {
        return infeasible(format!("ranks need {needed} independent directions but n = {n}"));
    }

    let mut rng = rng::seeded(seed);
    let basis = orthonormal_vectors(n, needed, &mut rng);
    let mut offset = 0;
    let mut blocks = Vec::with_capacity(block_ranks.len());
    for &rank in block_ranks {
        let start = match layout {
            BlockLayout::Disjoint => offset,
            BlockLayout::Shared => 0,
        };
        let rows: Vec<&Vec<f64>> = basis[start..start + rank].iter().collect();
        let row_space = Matrix::from_fn(rank, n, |r, c| rows[r][c])?;
        let mixing = gaussian_matrix(rows_per_block, rank, 1.0, &mut rng)?;
        blocks.push(mixing.matmul(&row_space)?);
        offset += rank;
    }
    Ok(blocks)
}
