//! Geometry of the quotient by the orthogonal gauge action.
//!
//! A velocity `Z` at `X` splits into a vertical part `X Omega` (`Omega`
//! skew, invisible in `P`) and a horizontal part with `X^T Z` symmetric.
//! The skew rate is the solution of `G Omega + Omega G = X^T Z - Z^T X`
//! with `G = X^T X`; every solve below works in the eigenbasis of `G` (or
//! of the truncated `P`), where the operator is diagonal with entries
//! `lambda_i + lambda_j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{probability_matrix, SpectralDecomp, RANK_REL_TOL};

/// `lambda_min(G) <= GRAM_REL_TOL * lambda_max(G)` is treated as rank loss.
pub const GRAM_REL_TOL: f64 = 1e-12;

/// Default relative threshold on the null-null block of a P-velocity.
pub const REALIZABILITY_TOL: f64 = 1e-8;

/// Required eigenvalue separation (relative to `lambda_1`) for operations
/// that track individual eigenvectors.
pub const SIMPLE_SPECTRUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalHorizontalSplit {
    pub omega: DMatrix<f64>,
    pub vertical: DMatrix<f64>,
    pub horizontal: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    /// `X^T [M1, M2] X`.
    pub projected_commutator: DMatrix<f64>,
    /// Weighted eigenbasis sum.
    pub vertical_bracket_norm_sq: f64,
    /// `|X Omega*|_F^2` from the vertical projection of `-[M1, M2] X`.
    pub direct_norm_sq: f64,
    /// `(lambda_i, lambda_j, contribution)` for `i < j`.
    pub per_pair_contributions: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteTimeRank {
    pub rank: usize,
    pub spans_full: bool,
    pub b_matrices: Vec<DMatrix<f64>>,
}

/// Eigenpairs of `G = X^T X` in descending order, with a rank check.
fn gram_eigen(x: &DMatrix<f64>, context: &'static str) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (vals, vecs) = linalg::sym_eigen_desc(&(x.transpose() * x));
    let largest = vals.first().copied().unwrap_or(0.0);
    let smallest = vals.last().copied().unwrap_or(0.0);
    if !(largest > 0.0) || !(smallest > GRAM_REL_TOL * largest) {
        return Err(Error::RankDeficient {
            context,
            smallest,
            largest,
        });
    }
    Ok((vals, vecs))
}

/// Solve `diag(lam) Y + Y diag(lam) = rhs` elementwise in the given basis
/// and rotate back: returns `W Y W^T` with `Y = (W^T rhs W) / (lam_i + lam_j)`.
fn lyapunov_in_basis(lam: &[f64], w: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = w.transpose() * rhs * w;
    for i in 0..lam.len() {
        for j in 0..lam.len() {
            y[(i, j)] /= lam[i] + lam[j];
        }
    }
    w * y * w.transpose()
}

fn check_same_shape(x: &DMatrix<f64>, z: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if x.shape() != z.shape() {
        return Err(Error::shape(context, x.shape(), z.shape()));
    }
    Ok(())
}

/// Skew gauge rate `Omega` of the velocity `Z` at `X`.
pub fn connection_form(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_same_shape(x, z, "connection_form")?;
    let (lam, w) = gram_eigen(x, "connection_form")?;
    let xtz = x.transpose() * z;
    let rhs = &xtz - xtz.transpose();
    Ok(linalg::skew(&lyapunov_in_basis(&lam, &w, &rhs)))
}

/// Split `Z = X Omega* + H` with `H` horizontal. `X Omega*` is the closest
/// vertical vector to `Z` in Frobenius norm.
pub fn vertical_project(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<VerticalHorizontalSplit> {
    let omega = connection_form(x, z)?;
    let vertical = x * &omega;
    let horizontal = z - &vertical;
    Ok(VerticalHorizontalSplit {
        omega,
        vertical,
        horizontal,
    })
}

/// Null-null block norm `|(I - V V^T) Pdot (I - V V^T)|_F`.
pub fn null_block_norm(v: &DMatrix<f64>, pdot: &DMatrix<f64>) -> f64 {
    let vt_pdot = v.transpose() * pdot;
    let pdot_v = pdot * v;
    let projected = pdot - v * &vt_pdot - &pdot_v * v.transpose() + v * (v.transpose() * &pdot_v) * v.transpose();
    projected.norm()
}

fn check_positive_spectrum(decomp: &SpectralDecomp, context: &'static str) -> Result<()> {
    let largest = decomp.eigenvalues.first().copied().unwrap_or(0.0);
    let smallest = decomp.eigenvalues.last().copied().unwrap_or(0.0);
    if !(largest > 0.0) || !(smallest > GRAM_REL_TOL * largest) {
        return Err(Error::RankDeficient {
            context,
            smallest,
            largest,
        });
    }
    Ok(())
}

/// Reject `Pdot` whose null-null block exceeds `tol * |Pdot|_F`.
pub fn check_realizable(decomp: &SpectralDecomp, pdot: &DMatrix<f64>, tol: f64) -> Result<()> {
    let n = decomp.n();
    if pdot.shape() != (n, n) {
        return Err(Error::shape("P-velocity", (n, n), pdot.shape()));
    }
    let null_norm = null_block_norm(&decomp.eigenvectors, pdot);
    let threshold = tol * pdot.norm();
    if null_norm > threshold {
        return Err(Error::NotRealizable { null_norm, threshold });
    }
    Ok(())
}

/// Horizontal lift of `Pdot` at the canonical representative
/// `X = V Lambda^{1/2}`, using the default realizability tolerance.
pub fn horizontal_lift(decomp: &SpectralDecomp, pdot: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    horizontal_lift_with_tol(decomp, pdot, REALIZABILITY_TOL)
}

/// `X' = V S Lambda^{1/2} + (I - V V^T) Pdot V Lambda^{-1/2}` with
/// `S_ij = (V^T Pdot V)_ij / (lambda_i + lambda_j)`.
pub fn horizontal_lift_with_tol(decomp: &SpectralDecomp, pdot: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    check_positive_spectrum(decomp, "horizontal_lift")?;
    check_realizable(decomp, pdot, tol)?;
    let v = &decomp.eigenvectors;
    let lam = &decomp.eigenvalues;
    let d = lam.len();
    let pdot_v = pdot * v;
    let mut s = v.transpose() * &pdot_v;
    for i in 0..d {
        for j in 0..d {
            s[(i, j)] /= lam[i] + lam[j];
        }
    }
    let sqrt_l = DMatrix::from_diagonal(&DVector::from_iterator(d, lam.iter().map(|l| l.sqrt())));
    let inv_sqrt_l = DMatrix::from_diagonal(&DVector::from_iterator(d, lam.iter().map(|l| 1.0 / l.sqrt())));
    let cross = &pdot_v - v * (v.transpose() * &pdot_v);
    Ok(v * s * sqrt_l + cross * inv_sqrt_l)
}

/// `X^T (M1 M2 - M2 M1) X`, computed as `A^T B - B^T A` with `A = M1 X`,
/// `B = M2 X` (both generators symmetric), which is exactly skew.
pub fn projected_commutator(x: &DMatrix<f64>, m1: &DMatrix<f64>, m2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    for m in [m1, m2] {
        if m.shape() != (n, n) {
            return Err(Error::shape("projected_commutator", (n, n), m.shape()));
        }
    }
    let a = m1 * x;
    let b = m2 * x;
    let ab = a.transpose() * &b;
    Ok(&ab - ab.transpose())
}

/// Squared norm of the vertical part of the bracket of the horizontal
/// fields `M1 X` and `M2 X`, with its per-eigenpair breakdown.
pub fn curvature_norm(x: &DMatrix<f64>, m1: &DMatrix<f64>, m2: &DMatrix<f64>) -> Result<CurvatureReport> {
    let c = projected_commutator(x, m1, m2)?;
    let (lam, w) = gram_eigen(x, "curvature_norm")?;
    // With U = X W Lambda^{-1/2}, (U^T [M1,M2] U)_ij = (W^T C W)_ij / sqrt(lam_i lam_j),
    // so each weighted term collapses to 4 (W^T C W)_ij^2 / (lam_i + lam_j).
    let ct = w.transpose() * &c * &w;
    let d = lam.len();
    let mut pairs = Vec::with_capacity(d * d.saturating_sub(1) / 2);
    let mut total = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            let u_entry = ct[(i, j)] / (lam[i] * lam[j]).sqrt();
            let contribution = 4.0 * lam[i] * lam[j] / (lam[i] + lam[j]) * u_entry * u_entry;
            total += contribution;
            pairs.push((lam[i], lam[j], contribution));
        }
    }
    let bracket = m1 * m2 - m2 * m1;
    let z = -(bracket * x);
    let direct = vertical_project(x, &z)?.vertical.norm_squared();
    Ok(CurvatureReport {
        projected_commutator: c,
        vertical_bracket_norm_sq: total,
        direct_norm_sq: direct,
        per_pair_contributions: pairs,
    })
}

/// Graph Laplacian `L = diag(P 1) - P` of the probability matrix of `X`.
pub fn laplacian(x: &DMatrix<f64>) -> DMatrix<f64> {
    let p = probability_matrix(x).into_matrix();
    laplacian_of(&p)
}

fn laplacian_of(p: &DMatrix<f64>) -> DMatrix<f64> {
    let deg = p.column_sum();
    DMatrix::from_diagonal(&deg) - p
}

/// `sum_k alpha_k P^k` (with `P^0 = I`).
pub fn polynomial_generator(x: &DMatrix<f64>, alpha: &[f64]) -> DMatrix<f64> {
    let n = x.nrows();
    let p = probability_matrix(x).into_matrix();
    let mut out = DMatrix::zeros(n, n);
    let mut power = DMatrix::identity(n, n);
    for (k, &a) in alpha.iter().enumerate() {
        if k > 0 {
            power = &power * &p;
        }
        out += &power * a;
    }
    out
}

/// `Psi(X) = X^T [L, L'] X` where `L'` is the Laplacian rate under the
/// Laplacian flow: `P' = 2 P^2 - D P - P D`, `L' = diag(P' 1) - P'`.
pub fn laplacian_psi(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() < 2 || x.ncols() == 0 {
        return Err(Error::shape("laplacian_psi", (2, x.ncols().max(1)), x.shape()));
    }
    let p = probability_matrix(x).into_matrix();
    let deg = p.column_sum();
    let dmat = DMatrix::from_diagonal(&deg);
    let pdot = &p * &p * 2.0 - &dmat * &p - &p * &dmat;
    let l = &dmat - &p;
    let ldot = laplacian_of(&pdot);
    projected_commutator(x, &l, &ldot)
}

/// Rank of the span of `B_a = X(t0)^T [L(t0), L(s_a)] X(t0)` in the skew
/// matrices.
pub fn finite_time_rank(traj: &Trajectory, t0_index: usize, sample_indices: &[usize]) -> Result<FiniteTimeRank> {
    let len = traj.len();
    if t0_index >= len || sample_indices.iter().any(|&s| s >= len) {
        return Err(Error::InvalidInput("sample index outside trajectory".into()));
    }
    let x0 = &traj.states[t0_index];
    let d = x0.ncols();
    let target = d * d.saturating_sub(1) / 2;
    if sample_indices.len() < target {
        return Err(Error::InsufficientSamples {
            samples: sample_indices.len(),
            features: target,
        });
    }
    for &s in std::iter::once(&t0_index).chain(sample_indices) {
        let x = &traj.states[s];
        let sv = linalg::singular_values(x);
        let (largest, smallest) = (sv[0], sv[sv.len() - 1]);
        if !(smallest > RANK_REL_TOL * largest) {
            return Err(Error::RankDeficient {
                context: "finite_time_rank",
                smallest,
                largest,
            });
        }
    }
    let l0 = laplacian(x0);
    let mut b_matrices = Vec::with_capacity(sample_indices.len());
    let mut rows = DMatrix::zeros(sample_indices.len(), target);
    for (a, &s) in sample_indices.iter().enumerate() {
        let b = projected_commutator(x0, &l0, &laplacian(&traj.states[s]))?;
        let mut col = 0;
        for i in 0..d {
            for j in (i + 1)..d {
                rows[(a, col)] = b[(i, j)];
                col += 1;
            }
        }
        b_matrices.push(b);
    }
    // Entries below 1e-12 of |X^T L X|^2 are roundoff in the commutator.
    let scale = (x0.transpose() * &l0 * x0).norm_squared();
    let rank = if target == 0 || rows.amax() <= 1e-12 * scale {
        0
    } else {
        linalg::numerical_rank(&rows, RANK_REL_TOL)
    };
    Ok(FiniteTimeRank {
        rank,
        spans_full: rank == target,
        b_matrices,
    })
}

/// Fails with [`Error::DegenerateSpectrum`] unless all eigenvalues are
/// separated by more than `SIMPLE_SPECTRUM_TOL * |lambda_1|`.
pub fn require_simple_spectrum(decomp: &SpectralDecomp) -> Result<()> {
    let sep = decomp.min_relative_separation();
    if !(sep > SIMPLE_SPECTRUM_TOL) {
        return Err(Error::DegenerateSpectrum {
            separation: sep,
            threshold: SIMPLE_SPECTRUM_TOL,
        });
    }
    Ok(())
}

/// `max_i (1 - |<u_i(a), u_i(b)>|)`: zero when eigenvectors are unchanged.
pub fn eigenvector_stationarity(a: &SpectralDecomp, b: &SpectralDecomp) -> Result<f64> {
    require_simple_spectrum(a)?;
    require_simple_spectrum(b)?;
    if a.eigenvectors.shape() != b.eigenvectors.shape() {
        return Err(Error::shape("eigenvector_stationarity", a.eigenvectors.shape(), b.eigenvectors.shape()));
    }
    let overlap = a.eigenvectors.transpose() * &b.eigenvectors;
    Ok((0..a.d()).map(|i| 1.0 - overlap[(i, i)].abs()).fold(0.0, f64::max))
}
