//! Latent configurations, probability matrices and their truncated spectra.
//!
//! A [`LatentConfig`] holds the `n x d` matrix of latent positions `X`;
//! its [`ProbMatrix`] is `P = X X^T`, which is invariant under `X -> XQ` for
//! any orthogonal `Q`. [`spectral_decompose`] extracts the top-`d`
//! eigenpairs of `P` with a deterministic sign convention so that repeated
//! embeddings of the same matrix agree bit for bit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative threshold for the rank test on `X`: `sigma_min > 1e-8 * sigma_max`.
pub const RANK_REL_TOL: f64 = 1e-8;

/// Default absolute tolerance on `|lambda_d|` used by embeddings.
pub const DEFAULT_GAP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentConfig {
    entries: DMatrix<f64>,
}

impl LatentConfig {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (n, d) = entries.shape();
        if d == 0 || n < d {
            return Err(Error::InvalidInput(format!(
                "latent configuration needs n >= d >= 1, got n={n}, d={d}"
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("latent configuration has non-finite entries".into()));
        }
        Ok(Self { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn d(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn probability_matrix(&self) -> ProbMatrix {
        probability_matrix(&self.entries)
    }
}

/// Edge-probability matrix `P = X X^T` together with its rank bound `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    entries: DMatrix<f64>,
    rank_bound: usize,
}

impl ProbMatrix {
    /// Wrap a symmetric matrix. Symmetry is checked to `1e-12` relative to
    /// the largest entry.
    pub fn new(entries: DMatrix<f64>, rank_bound: usize) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::shape("probability matrix", (entries.nrows(), entries.nrows()), entries.shape()));
        }
        let scale = entries.amax().max(1.0);
        if linalg::asymmetry(&entries) > 1e-12 * scale {
            return Err(Error::InvalidInput("probability matrix is not symmetric".into()));
        }
        Ok(Self { entries, rank_bound })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn rank_bound(&self) -> usize {
        self.rank_bound
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }
}

/// `P = X X^T`.
pub fn probability_matrix(x: &DMatrix<f64>) -> ProbMatrix {
    let p = x * x.transpose();
    ProbMatrix {
        entries: linalg::symmetrize(&p),
        rank_bound: x.ncols(),
    }
}

/// Outcome of [`validate_interior`]; `failures` lists every violated condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteriorReport {
    pub rank: usize,
    pub d: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub min_offdiag: f64,
    pub max_offdiag: f64,
    pub min_diag: f64,
    pub max_diag: f64,
    pub tol: f64,
    pub failures: Vec<String>,
}

impl InteriorReport {
    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Check that `X` is in the interior of the model domain: full column rank
/// and every entry of `P = X X^T` strictly inside `(tol, 1 - tol)`.
///
/// Configurations that fail are reported, never rejected.
pub fn validate_interior(x: &DMatrix<f64>, tol: f64) -> InteriorReport {
    let d = x.ncols();
    let sv = linalg::singular_values(x);
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let sigma_min = sv.get(d.saturating_sub(1)).copied().unwrap_or(0.0);
    let rank = linalg::numerical_rank(x, RANK_REL_TOL);

    let p = probability_matrix(x).entries;
    let n = p.nrows();
    let (mut min_off, mut max_off) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_diag, mut max_diag) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for j in 0..n {
            let v = p[(i, j)];
            if i == j {
                min_diag = min_diag.min(v);
                max_diag = max_diag.max(v);
            } else {
                min_off = min_off.min(v);
                max_off = max_off.max(v);
            }
        }
    }

    let mut failures = Vec::new();
    if rank < d {
        failures.push(format!("rank deficiency: numerical rank {rank} < d = {d}"));
    }
    if n > 1 {
        if min_off <= tol {
            failures.push(format!("off-diagonal probability {min_off} <= {tol}"));
        }
        if max_off >= 1.0 - tol {
            failures.push(format!("off-diagonal probability {max_off} >= {}", 1.0 - tol));
        }
    }
    if min_diag <= tol {
        failures.push(format!("diagonal probability {min_diag} <= {tol}"));
    }
    if max_diag >= 1.0 - tol {
        failures.push(format!("diagonal probability {max_diag} >= {}", 1.0 - tol));
    }

    InteriorReport {
        rank,
        d,
        sigma_min,
        sigma_max,
        min_offdiag: min_off,
        max_offdiag: max_off,
        min_diag,
        max_diag,
        tol,
        failures,
    }
}

/// Top-`d` eigenpairs of a symmetric matrix ordered by magnitude, with
/// each eigenvector's largest-magnitude entry made positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDecomp {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// `true` where the raw solver column was negated.
    pub sign_flipped: Vec<bool>,
}

impl SpectralDecomp {
    /// Build a decomposition from given orthonormal columns and eigenvalues,
    /// applying the sign convention.
    pub fn from_parts(eigenvalues: Vec<f64>, mut eigenvectors: DMatrix<f64>) -> Result<Self> {
        if eigenvalues.len() != eigenvectors.ncols() {
            return Err(Error::shape(
                "spectral decomposition",
                (eigenvectors.nrows(), eigenvalues.len()),
                eigenvectors.shape(),
            ));
        }
        let sign_flipped = apply_sign_convention(&mut eigenvectors);
        Ok(Self {
            eigenvalues,
            eigenvectors,
            sign_flipped,
        })
    }

    pub fn n(&self) -> usize {
        self.eigenvectors.nrows()
    }

    pub fn d(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Spectral gap `lambda_d` (by magnitude).
    pub fn gap(&self) -> f64 {
        self.eigenvalues.last().map(|v| v.abs()).unwrap_or(0.0)
    }

    /// `U diag(lambda) U^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let lam = DMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues.clone()));
        &self.eigenvectors * lam * self.eigenvectors.transpose()
    }

    /// Canonical-gauge positions `U |Lambda|^{1/2}`.
    pub fn scaled_embedding(&self) -> DMatrix<f64> {
        let mut x = self.eigenvectors.clone();
        for (j, l) in self.eigenvalues.iter().enumerate() {
            let s = l.abs().sqrt();
            x.column_mut(j).scale_mut(s);
        }
        x
    }

    /// Smallest pairwise eigenvalue separation relative to `|lambda_1|`.
    pub fn min_relative_separation(&self) -> f64 {
        let l1 = self.eigenvalues.first().map(|v| v.abs()).unwrap_or(0.0);
        let mut sep = f64::INFINITY;
        for i in 0..self.eigenvalues.len() {
            for j in (i + 1)..self.eigenvalues.len() {
                sep = sep.min((self.eigenvalues[i] - self.eigenvalues[j]).abs());
            }
        }
        if l1 > 0.0 {
            sep / l1
        } else {
            0.0
        }
    }
}

/// Flip columns so the largest-magnitude entry is positive (lowest row
/// index wins ties). Returns which columns were negated.
pub fn apply_sign_convention(vectors: &mut DMatrix<f64>) -> Vec<bool> {
    let mut flipped = Vec::with_capacity(vectors.ncols());
    for j in 0..vectors.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for i in 0..vectors.nrows() {
            let a = vectors[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        let flip = vectors[(best, j)] < 0.0;
        if flip {
            vectors.column_mut(j).neg_mut();
        }
        flipped.push(flip);
    }
    flipped
}

/// Top-`d` eigenpairs of the symmetric matrix `m` by eigenvalue magnitude.
///
/// Raises [`Error::DegenerateGap`] when `|lambda_d| < gap_tol`.
pub fn spectral_decompose_matrix(m: &DMatrix<f64>, d: usize, gap_tol: f64) -> Result<SpectralDecomp> {
    if !m.is_square() {
        return Err(Error::shape("spectral_decompose", (m.nrows(), m.nrows()), m.shape()));
    }
    let n = m.nrows();
    if d == 0 || d > n {
        return Err(Error::InvalidInput(format!("need 1 <= d <= n, got d={d}, n={n}")));
    }
    let (vals, vecs) = linalg::sorted_sym_eigen(m);
    let lambda_d = vals[d - 1].abs();
    if !(lambda_d >= gap_tol) {
        return Err(Error::DegenerateGap {
            index: d,
            value: lambda_d,
            tol: gap_tol,
        });
    }
    SpectralDecomp::from_parts(vals[..d].to_vec(), vecs.columns(0, d).into_owned())
}

pub fn spectral_decompose(p: &ProbMatrix, d: usize, gap_tol: f64) -> Result<SpectralDecomp> {
    spectral_decompose_matrix(&p.entries, d, gap_tol)
}
