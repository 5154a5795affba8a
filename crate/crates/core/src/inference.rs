//! Parameter recovery from observed probability trajectories.
//!
//! * [`lyapunov_invert`]: the blocks of a symmetric generator `N` that a
//!   single `P' = N P + P N` determines.
//! * [`fit_polynomial_coeffs`]: least squares for `alpha` in
//!   `P' = sum_k alpha_k 2 P^{k+1}` from finite differences.
//! * [`fit_field_regression`]: ridge regression of velocities on monomials
//!   of the offset from a centroid.
//! * [`fisher_polynomial`]: Fisher information for polynomial coefficients
//!   under Bernoulli edge noise, via the eigenvalue sensitivity ODE.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::{self, REALIZABILITY_TOL};
use crate::linalg;
use crate::model::SpectralDecomp;

/// Design matrices with condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Default ridge penalty for the field regression.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Relative eigenvalue cutoff for the Fisher pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Default clip applied to `P_ij` inside Fisher weights.
pub const DEFAULT_PROB_FLOOR: f64 = 1e-6;

/// Determined part of `N` in the eigenbasis `[V, V_perp]` of `P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovInversion {
    /// `V^T N V`, `d x d` symmetric.
    pub range_range: DMatrix<f64>,
    /// `V^T N V_perp`, `d x (n - d)`.
    pub cross: DMatrix<f64>,
    /// `V_perp^T N V_perp` is unconstrained; this is its dimension `n - d`.
    pub null_dim: usize,
    pub basis: SpectralDecomp,
    pub complement: DMatrix<f64>,
    /// `|P'_rebuilt - P'_realizable|_F / |P'|_F`.
    pub residual: f64,
}

impl LyapunovInversion {
    /// Number of entries of `N` fixed by the data: `n d - d (d - 1) / 2`.
    pub fn determined_count(&self) -> usize {
        let d = self.range_range.nrows();
        let n = d + self.null_dim;
        n * d - d * (d - 1) / 2
    }

    /// `N` with the free block set to `free` (`(n - d) x (n - d)` symmetric).
    pub fn generator_with_free_block(&self, free: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.null_dim;
        if free.shape() != (m, m) {
            return Err(Error::shape("free block", (m, m), free.shape()));
        }
        let v = &self.basis.eigenvectors;
        let w = &self.complement;
        let cross = v * &self.cross * w.transpose();
        Ok(v * &self.range_range * v.transpose() + &cross + cross.transpose() + w * free * w.transpose())
    }

    /// `N` with the free block set to zero.
    pub fn generator(&self) -> DMatrix<f64> {
        self.generator_with_free_block(&DMatrix::zeros(self.null_dim, self.null_dim))
            .expect("zero block has the right shape")
    }
}

pub fn lyapunov_invert(decomp: &SpectralDecomp, pdot: &DMatrix<f64>) -> Result<LyapunovInversion> {
    lyapunov_invert_with_tol(decomp, pdot, REALIZABILITY_TOL)
}

pub fn lyapunov_invert_with_tol(decomp: &SpectralDecomp, pdot: &DMatrix<f64>, tol: f64) -> Result<LyapunovInversion> {
    let lam = &decomp.eigenvalues;
    let largest = lam.first().copied().unwrap_or(0.0);
    let smallest = lam.last().copied().unwrap_or(0.0);
    if !(largest > 0.0) || !(smallest > geometry::GRAM_REL_TOL * largest) {
        return Err(Error::RankDeficient {
            context: "lyapunov_invert",
            smallest,
            largest,
        });
    }
    geometry::check_realizable(decomp, pdot, tol)?;
    let v = &decomp.eigenvectors;
    let (n, d) = v.shape();
    let w = linalg::orthogonal_complement(v);
    let pdot_v = pdot * v;
    let mut range_range = v.transpose() * &pdot_v;
    for i in 0..d {
        for j in 0..d {
            range_range[(i, j)] /= lam[i] + lam[j];
        }
    }
    let mut cross = v.transpose() * pdot * &w;
    for i in 0..d {
        for j in 0..(n - d) {
            cross[(i, j)] /= lam[i];
        }
    }
    let mut inv = LyapunovInversion {
        range_range,
        cross,
        null_dim: n - d,
        basis: decomp.clone(),
        complement: w,
        residual: 0.0,
    };
    let p = decomp.reconstruct();
    let nmat = inv.generator();
    let rebuilt = &nmat * &p + &p * &nmat;
    let w = &inv.complement;
    let realizable = pdot - w * (w.transpose() * pdot * w) * w.transpose();
    let scale = pdot.norm();
    inv.residual = if scale > 0.0 { (rebuilt - realizable).norm() / scale } else { 0.0 };
    Ok(inv)
}

/// Finite-difference velocities of a uniformly sampled sequence.
///
/// `order = 2` uses `(f(t+1) - f(t-1)) / 2h` at frames `1..T-1`; `order = 4`
/// uses the five-point stencil at frames `2..T-2`. Returns
/// `(frame_index, velocity)` pairs.
pub fn finite_difference_velocities(
    frames: &[DMatrix<f64>],
    dt: f64,
    order: usize,
) -> Result<Vec<(usize, DMatrix<f64>)>> {
    let len = frames.len();
    match order {
        2 if len >= 3 => Ok((1..len - 1)
            .map(|t| (t, (&frames[t + 1] - &frames[t - 1]) / (2.0 * dt)))
            .collect()),
        4 if len >= 5 => Ok((2..len - 2)
            .map(|t| {
                let v = (&frames[t - 2] - &frames[t - 1] * 8.0 + &frames[t + 1] * 8.0 - &frames[t + 2]) / (12.0 * dt);
                (t, v)
            })
            .collect()),
        2 | 4 => Err(Error::InsufficientSamples {
            samples: len,
            features: order + 1,
        }),
        _ => Err(Error::InvalidInput(format!("unsupported difference order {order}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFit {
    /// `alpha_0 .. alpha_K`.
    pub coefficients: Vec<f64>,
    pub relative_residual: f64,
    /// Condition number of the column-equilibrated design matrix.
    pub condition_number: f64,
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Least-squares `alpha` for `P'(t) = sum_k alpha_k 2 P(t)^{k+1}` with `P'`
/// from central differences at interior frames. `p_traj` holds `P` states.
pub fn fit_polynomial_coeffs(p_traj: &Trajectory, degree: usize) -> Result<PolynomialFit> {
    let k = degree + 1;
    if p_traj.len() < (degree + 2).max(3) {
        return Err(Error::InsufficientSamples {
            samples: p_traj.len(),
            features: (degree + 2).max(3),
        });
    }
    p_traj.check_grid()?;
    let n = p_traj.states[0].nrows();
    if let Some(bad) = p_traj.states.iter().find(|s| s.shape() != (n, n)) {
        return Err(Error::shape("fit_polynomial_coeffs", (n, n), bad.shape()));
    }
    let velocities = finite_difference_velocities(&p_traj.states, p_traj.dt, 2)?;
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    let mut target_sq = 0.0;
    let mut bases_per_time = Vec::with_capacity(velocities.len());
    for (t, pdot) in &velocities {
        let p = &p_traj.states[*t];
        let mut bases = Vec::with_capacity(k);
        let mut power = p * 2.0;
        for _ in 0..k {
            bases.push(power.clone());
            power = &power * p;
        }
        for a in 0..k {
            rhs[a] += frob(&bases[a], pdot);
            for b in a..k {
                let v = frob(&bases[a], &bases[b]);
                gram[(a, b)] += v;
                if a != b {
                    gram[(b, a)] += v;
                }
            }
        }
        target_sq += pdot.norm_squared();
        bases_per_time.push(bases);
    }
    let diag: Vec<f64> = (0..k).map(|a| gram[(a, a)]).collect();
    if diag.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::IllConditioned { cond: f64::INFINITY });
    }
    let scale = DVector::from_iterator(k, diag.iter().map(|g| 1.0 / g.sqrt()));
    let scaled = DMatrix::from_fn(k, k, |a, b| gram[(a, b)] * scale[a] * scale[b]);
    let (vals, _) = linalg::sym_eigen_desc(&scaled);
    let smallest = vals[k - 1];
    let cond = if smallest > 0.0 { (vals[0] / smallest).sqrt() } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned { cond });
    }
    let scaled_rhs = rhs.component_mul(&scale);
    let y = scaled
        .clone()
        .cholesky()
        .map(|c| c.solve(&scaled_rhs))
        .or_else(|| scaled.lu().solve(&scaled_rhs))
        .ok_or(Error::IllConditioned { cond })?;
    let alpha = y.component_mul(&scale);
    let mut resid_sq = 0.0;
    for ((_, pdot), bases) in velocities.iter().zip(&bases_per_time) {
        let mut fit = pdot.clone();
        for (a, b) in bases.iter().enumerate() {
            fit -= b * alpha[a];
        }
        resid_sq += fit.norm_squared();
    }
    let relative_residual = if target_sq > 0.0 { (resid_sq / target_sq).sqrt() } else { 0.0 };
    Ok(PolynomialFit {
        coefficients: alpha.iter().copied().collect(),
        relative_residual,
        condition_number: cond,
    })
}

/// All exponent tuples in `dim` variables with total degree `<= degree`,
/// ordered by total degree, then lexicographically descending.
pub fn monomial_exponents(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    fn rec(dim: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == dim - 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            rec(dim, remaining - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=degree as u32 {
        rec(dim, total, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

fn monomial(x: &DVector<f64>, exps: &[u32]) -> f64 {
    x.iter().zip(exps).map(|(v, &e)| v.powi(e as i32)).product()
}

/// Ridge fit of a vector field on polynomial features of the offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFit {
    pub dim: usize,
    pub degree: usize,
    pub ridge: f64,
    pub exponents: Vec<Vec<u32>>,
    /// Each raw monomial is divided by its training RMS before fitting.
    pub feature_scales: Vec<f64>,
    /// `features x dim` weights on the scaled features.
    pub weights: DMatrix<f64>,
}

impl FieldFit {
    fn features(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.exponents.len(),
            self.exponents.iter().zip(&self.feature_scales).map(|(e, s)| monomial(x, e) / s),
        )
    }

    pub fn predict(&self, offset: &DVector<f64>) -> DVector<f64> {
        self.weights.transpose() * self.features(offset)
    }

    /// Mean over `points` of `|f_hat(x) - f(x)|^2`.
    pub fn mse<F: Fn(&DVector<f64>) -> DVector<f64>>(&self, points: &[DVector<f64>], truth: F) -> f64 {
        let total: f64 = points.iter().map(|p| (self.predict(p) - truth(p)).norm_squared()).sum();
        total / points.len().max(1) as f64
    }

    /// Coefficients on the raw (unscaled) monomials: `(exponents, component, value)`.
    pub fn coefficient_table(&self) -> Vec<(Vec<u32>, usize, f64)> {
        let mut out = Vec::new();
        for (f, e) in self.exponents.iter().enumerate() {
            for c in 0..self.dim {
                out.push((e.clone(), c, self.weights[(f, c)] / self.feature_scales[f]));
            }
        }
        out
    }

    /// Linear block `J_hat` (`dim x dim`): coefficient of `x_j` in component `i`.
    pub fn linear_block(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (exps, comp, value) in self.coefficient_table() {
            if exps.iter().sum::<u32>() == 1 {
                let j = exps.iter().position(|&e| e == 1).unwrap();
                out[(comp, j)] = value;
            }
        }
        out
    }

    /// Damping estimate `-tr(J_hat) / dim`.
    pub fn damping_estimate(&self) -> f64 {
        -self.linear_block().trace() / self.dim as f64
    }
}

/// Ridge regression `min (1/N) |Phi W - Y|^2 + ridge |W|^2` on monomials of
/// the offsets up to `degree`, features scaled to unit RMS.
pub fn fit_field_regression(samples: &[(DVector<f64>, DVector<f64>)], degree: usize, ridge: f64) -> Result<FieldFit> {
    let first = samples.first().ok_or(Error::EmptyInput("regression samples"))?;
    let dim = first.0.len();
    if dim == 0 {
        return Err(Error::InvalidInput("offsets must have positive dimension".into()));
    }
    if samples.iter().any(|(x, v)| x.len() != dim || v.len() != dim) {
        return Err(Error::InvalidInput("regression samples have inconsistent dimensions".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidInput(format!("ridge penalty must be non-negative, got {ridge}")));
    }
    let exponents = monomial_exponents(dim, degree);
    let p = exponents.len();
    let count = samples.len();
    if count < p {
        return Err(Error::InsufficientSamples {
            samples: count,
            features: p,
        });
    }
    let mut phi = DMatrix::from_fn(count, p, |i, f| monomial(&samples[i].0, &exponents[f]));
    let mut feature_scales = Vec::with_capacity(p);
    for f in 0..p {
        let rms = (phi.column(f).norm_squared() / count as f64).sqrt();
        let s = if rms > 0.0 { rms } else { 1.0 };
        phi.column_mut(f).unscale_mut(s);
        feature_scales.push(s);
    }
    let y = DMatrix::from_fn(count, dim, |i, c| samples[i].1[c]);
    let weights = ridge_solve(&phi, &y, ridge)?;
    Ok(FieldFit {
        dim,
        degree,
        ridge,
        exponents,
        feature_scales,
        weights,
    })
}

fn ridge_solve(phi: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let nf = phi.nrows() as f64;
    let mut lhs = phi.transpose() * phi / nf;
    for f in 0..phi.ncols() {
        lhs[(f, f)] += ridge;
    }
    let rhs = phi.transpose() * y / nf;
    match lhs.clone().cholesky() {
        Some(c) => Ok(c.solve(&rhs)),
        None => lhs.lu().solve(&rhs).ok_or(Error::IllConditioned { cond: f64::INFINITY }),
    }
}

/// Fisher information for polynomial coefficients and the associated bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    pub times: Vec<f64>,
    /// `(K + 1) x (K + 1)`.
    pub info_matrix: DMatrix<f64>,
    pub per_time_contributions: Vec<DMatrix<f64>>,
    /// `d x d` weights `C(t)`.
    pub weights: Vec<DMatrix<f64>>,
    /// `d x (K + 1)` sensitivities `d lambda_i / d theta_a` per time.
    pub eig_sensitivities: Vec<DMatrix<f64>>,
    pub eigenvalues: Vec<Vec<f64>>,
    /// Trace of the (pseudo)inverse information.
    pub crb_trace: f64,
    pub rank: usize,
    pub prob_floor: f64,
    /// Number of `(t, i < j)` weights where `P_ij` was clipped.
    pub clipped: usize,
}

impl FisherReport {
    /// `sum_t S_ia S_ib C_ii(t)`: the part of `I_ab` routed through eigenvalue `i` alone.
    pub fn direction_contribution(&self, i: usize, a: usize, b: usize) -> f64 {
        self.eig_sensitivities
            .iter()
            .zip(&self.weights)
            .map(|(s, c)| s[(i, a)] * s[(i, b)] * c[(i, i)])
            .sum()
    }
}

/// Joint RK4 integration of the eigenvalue flow and its parameter
/// sensitivities. Returns per-snapshot eigenvalues and `d x (K+1)`
/// sensitivity matrices at `t_k = k dt`, `k = 0..=steps`.
pub fn eigen_sensitivities(
    theta: &[f64],
    lambda0: &[f64],
    steps: usize,
    dt: f64,
    substeps: usize,
) -> Result<(Vec<Vec<f64>>, Vec<DMatrix<f64>>)> {
    let k = theta.len();
    let d = lambda0.len();
    if k == 0 {
        return Err(Error::InvalidInput("need at least one coefficient".into()));
    }
    if !(dt > 0.0) || substeps == 0 {
        return Err(Error::InvalidInput("need dt > 0 and at least one substep".into()));
    }
    // State per eigenvalue: [lambda, S_0, ..., S_K].
    let rhs = |y: &[f64]| -> Vec<f64> {
        let l = y[0];
        let mut rate = 0.0;
        let mut slope = 0.0;
        let mut pow = 1.0;
        for (j, &th) in theta.iter().enumerate() {
            slope += th * (j as f64 + 1.0) * pow;
            pow *= l;
            rate += th * pow;
        }
        let mut out = Vec::with_capacity(k + 1);
        out.push(2.0 * rate);
        let mut lp = l;
        for a in 0..k {
            out.push(2.0 * lp + 2.0 * slope * y[a + 1]);
            lp *= l;
        }
        out
    };
    let h = dt / substeps as f64;
    let mut eigenvalues = vec![lambda0.to_vec()];
    let mut sens = vec![DMatrix::zeros(d, k)];
    let mut states: Vec<Vec<f64>> = lambda0
        .iter()
        .map(|&l| {
            let mut v = vec![0.0; k + 1];
            v[0] = l;
            v
        })
        .collect();
    let axpy = |y: &[f64], k: &[f64], s: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for step in 1..=steps {
        for y in states.iter_mut() {
            for _ in 0..substeps {
                let k1 = rhs(y);
                let k2 = rhs(&axpy(y, &k1, h / 2.0));
                let k3 = rhs(&axpy(y, &k2, h / 2.0));
                let k4 = rhs(&axpy(y, &k3, h));
                for i in 0..y.len() {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step });
            }
        }
        eigenvalues.push(states.iter().map(|y| y[0]).collect());
        sens.push(DMatrix::from_fn(d, k, |i, a| states[i][a + 1]));
    }
    Ok((eigenvalues, sens))
}

/// Fisher information for `theta` over snapshots `t_k = k dt`,
/// `k = 0..=t_count`, with eigenvectors of `P(0)` held fixed.
pub fn fisher_polynomial(
    p0: &SpectralDecomp,
    theta: &[f64],
    t_count: usize,
    dt: f64,
    prob_floor: f64,
) -> Result<FisherReport> {
    if !(prob_floor > 0.0 && prob_floor < 0.5) {
        return Err(Error::InvalidInput(format!("probability floor must lie in (0, 0.5), got {prob_floor}")));
    }
    let lam0 = &p0.eigenvalues;
    if lam0.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::RankDeficient {
            context: "fisher_polynomial",
            smallest: lam0.iter().copied().fold(f64::INFINITY, f64::min),
            largest: lam0.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    geometry::require_simple_spectrum(p0)?;
    let (eigenvalues, sens) = eigen_sensitivities(theta, lam0, t_count, dt, 4)?;
    let u = &p0.eigenvectors;
    let (n, d) = u.shape();
    let k = theta.len();
    let mut info = DMatrix::zeros(k, k);
    let mut per_time = Vec::with_capacity(t_count + 1);
    let mut weights = Vec::with_capacity(t_count + 1);
    let mut clipped = 0;
    for (lam, s) in eigenvalues.iter().zip(&sens) {
        let mut c = DMatrix::zeros(d, d);
        for i in 0..n {
            for j in (i + 1)..n {
                let mut p = 0.0;
                for a in 0..d {
                    p += u[(i, a)] * u[(j, a)] * lam[a];
                }
                let pc = p.clamp(prob_floor, 1.0 - prob_floor);
                if pc != p {
                    clipped += 1;
                }
                let w = 1.0 / (pc * (1.0 - pc));
                for a in 0..d {
                    let wa = u[(i, a)] * u[(j, a)];
                    for b in a..d {
                        c[(a, b)] += wa * u[(i, b)] * u[(j, b)] * w;
                    }
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                c[(a, b)] = c[(b, a)];
            }
        }
        let contribution = s.transpose() * &c * s;
        info += &contribution;
        per_time.push(contribution);
        weights.push(c);
    }
    let info = linalg::symmetrize(&info);
    let (inv, rank) = linalg::sym_pinv(&info, PINV_CUTOFF);
    Ok(FisherReport {
        times: (0..=t_count).map(|t| t as f64 * dt).collect(),
        info_matrix: info,
        per_time_contributions: per_time,
        weights,
        eig_sensitivities: sens,
        eigenvalues,
        crb_trace: inv.trace(),
        rank,
        prob_floor,
        clipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrbRow {
    pub parameter: usize,
    /// `(I^{-1})_aa` (pseudoinverse when singular).
    pub inverse_diag: f64,
    /// `1 / I_aa`.
    pub baseline: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Compare the diagonal of the (pseudo)inverse information with the
/// reciprocal diagonal.
pub fn crb_baseline_check(info: &DMatrix<f64>) -> Vec<CrbRow> {
    let (inv, rank) = linalg::sym_pinv(info, PINV_CUTOFF);
    let full = rank == info.nrows();
    (0..info.nrows())
        .map(|a| {
            let inverse_diag = inv[(a, a)];
            let baseline = 1.0 / info[(a, a)];
            let slack = inverse_diag - baseline;
            CrbRow {
                parameter: a,
                inverse_diag,
                baseline,
                slack,
                holds: !full || slack >= -1e-10 * inverse_diag.abs().max(baseline.abs()),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{eigenvalue_flow, integrate, spiral_velocity, DynamicsSpec};
    use crate::model::{probability_matrix, spectral_decompose};
    use crate::random::{random_symmetric, rng_from_seed, uniform_positive_ball, SimRng};
    use nalgebra::{dmatrix, dvector};
    use rand::Rng;

    fn decomp(x: &DMatrix<f64>) -> SpectralDecomp {
        spectral_decompose(&probability_matrix(x), x.ncols(), 1e-12).unwrap()
    }

    #[test]
    fn linear_generator_inverts_to_scaled_identity() {
        let mut rng = rng_from_seed(1);
        let x = uniform_positive_ball(&mut rng, 6, 2);
        let dec = decomp(&x);
        let p = dec.reconstruct();
        let a = -0.7;
        let inv = lyapunov_invert(&dec, &(&p * (2.0 * a))).unwrap();
        assert!((&inv.range_range - DMatrix::<f64>::identity(2, 2) * a).amax() < 1e-12);
        assert!(inv.cross.amax() < 1e-12);
        assert_eq!(inv.determined_count(), 11);
    }

    #[test]
    fn inversion_recovers_generator_blocks() {
        let mut rng = rng_from_seed(2);
        let x = uniform_positive_ball(&mut rng, 6, 2);
        let dec = decomp(&x);
        let p = dec.reconstruct();
        let n_mat = random_symmetric(&mut rng, 6);
        let inv = lyapunov_invert(&dec, &(&n_mat * &p + &p * &n_mat)).unwrap();
        let v = &dec.eigenvectors;
        let w = &inv.complement;
        assert!((&inv.range_range - v.transpose() * &n_mat * v).amax() < 1e-8);
        assert!((&inv.cross - v.transpose() * &n_mat * w).amax() < 1e-8);
        assert!(inv.residual < 1e-12);
    }

    #[test]
    fn zero_velocity_inverts_to_zero() {
        let mut rng = rng_from_seed(3);
        let dec = decomp(&uniform_positive_ball(&mut rng, 5, 2));
        let inv = lyapunov_invert(&dec, &DMatrix::zeros(5, 5)).unwrap();
        assert_eq!(inv.range_range, DMatrix::zeros(2, 2));
        assert_eq!(inv.cross, DMatrix::zeros(2, 3));
    }

    #[test]
    fn five_point_stencil_is_exact_on_quartics() {
        let frames: Vec<DMatrix<f64>> = (0..7).map(|k| dmatrix![(0.1 * k as f64).powi(4)]).collect();
        let v = finite_difference_velocities(&frames, 0.1, 4).unwrap();
        assert_eq!(v.len(), 3);
        for (t, d) in v {
            let expected = 4.0 * (0.1 * t as f64).powi(3);
            assert!((d[(0, 0)] - expected).abs() < 1e-12);
        }
        assert!(finite_difference_velocities(&frames[..4], 0.1, 4).is_err());
        assert!(finite_difference_velocities(&frames, 0.1, 3).is_err());
    }

    fn p_trajectory(alpha: Vec<f64>, n: usize, steps: usize, dt: f64, seed: u64) -> Trajectory {
        let mut rng = rng_from_seed(seed);
        let x0 = uniform_positive_ball(&mut rng, n, 2);
        integrate(&DynamicsSpec::polynomial(alpha), &x0, steps, dt)
            .unwrap()
            .probability_states()
    }

    #[test]
    fn polynomial_fit_recovers_coefficients() {
        let traj = p_trajectory(vec![-0.3, 0.003], 50, 30, 0.05, 4);
        let fit = fit_polynomial_coeffs(&traj, 1).unwrap();
        assert!((fit.coefficients[0] + 0.3).abs() < 1e-3);
        assert!((fit.coefficients[1] - 0.003).abs() < 1e-3);
        assert!(fit.relative_residual < 1e-3);
    }

    #[test]
    fn zero_dynamics_fit_to_zero() {
        let traj = p_trajectory(vec![0.0], 10, 5, 0.1, 5);
        let fit = fit_polynomial_coeffs(&traj, 1).unwrap();
        assert!(fit.coefficients.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn fit_needs_enough_frames() {
        let traj = p_trajectory(vec![0.0], 10, 1, 0.1, 6);
        assert!(matches!(
            fit_polynomial_coeffs(&traj, 1),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn high_degree_fit_reports_conditioning() {
        let traj = p_trajectory(vec![-0.3, 0.01], 30, 10, 0.05, 7);
        match fit_polynomial_coeffs(&traj, 6) {
            Err(Error::IllConditioned { cond }) => assert!(cond > MAX_CONDITION),
            Ok(fit) => assert!(fit.condition_number > 1e3),
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomial_exponents(3, 3).len(), 20);
        assert_eq!(monomial_exponents(2, 2).len(), 6);
        assert_eq!(monomial_exponents(3, 3)[0], vec![0, 0, 0]);
        assert_eq!(monomial_exponents(3, 3)[1], vec![1, 0, 0]);
    }

    fn cloud(rng: &mut SimRng, count: usize) -> Vec<DVector<f64>> {
        (0..count)
            .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-0.3..0.3)))
            .collect()
    }

    #[test]
    fn spiral_field_is_recovered_exactly() {
        let mut rng = rng_from_seed(8);
        let field = |x: &DVector<f64>| spiral_velocity(x, 0.3, -0.5, 1.0);
        let samples: Vec<_> = cloud(&mut rng, 400).into_iter().map(|x| (x.clone(), field(&x))).collect();
        let fit = fit_field_regression(&samples, 3, DEFAULT_RIDGE).unwrap();
        let test = cloud(&mut rng, 2000);
        let mse = fit.mse(&test, field);
        assert!(mse <= 1e-10, "{mse}");
        assert!((fit.damping_estimate() - 0.3).abs() < 1e-4);
    }

    #[test]
    fn zero_velocities_give_null_model() {
        let mut rng = rng_from_seed(9);
        let samples: Vec<_> = cloud(&mut rng, 100).into_iter().map(|x| (x, DVector::zeros(3))).collect();
        let fit = fit_field_regression(&samples, 3, DEFAULT_RIDGE).unwrap();
        assert!(fit.weights.amax() == 0.0);
        let test = cloud(&mut rng, 50);
        let field = |x: &DVector<f64>| spiral_velocity(x, 0.3, -0.5, 1.0);
        let expected = test.iter().map(|x| field(x).norm_squared()).sum::<f64>() / 50.0;
        assert!((fit.mse(&test, field) - expected).abs() < 1e-15);
    }

    #[test]
    fn regression_needs_enough_samples() {
        let samples = vec![(dvector![0.1, 0.2, 0.3], dvector![0.0, 0.0, 0.0]); 19];
        assert!(matches!(
            fit_field_regression(&samples, 3, DEFAULT_RIDGE),
            Err(Error::InsufficientSamples { samples: 19, features: 20 })
        ));
    }

    #[test]
    fn linear_fisher_matches_closed_form() {
        let mut rng = rng_from_seed(10);
        let x = uniform_positive_ball(&mut rng, 30, 2) * 0.9;
        let dec = decomp(&x);
        let alpha0 = -0.2;
        let dt = 0.1;
        let report = fisher_polynomial(&dec, &[alpha0], 40, dt, DEFAULT_PROB_FLOOR).unwrap();
        let p0 = dec.reconstruct();
        let mut closed = 0.0;
        for k in 0..=40 {
            let t = k as f64 * dt;
            let p = &p0 * (2.0 * alpha0 * t).exp();
            let mut s = 0.0;
            for i in 0..30 {
                for j in (i + 1)..30 {
                    s += p[(i, j)] / (1.0 - p[(i, j)]);
                }
            }
            closed += 4.0 * t * t * s;
        }
        let got = report.info_matrix[(0, 0)];
        assert!((got - closed).abs() <= 1e-6 * closed, "{got} vs {closed}");
        assert_eq!(report.clipped, 0);
    }

    #[test]
    fn single_snapshot_has_no_information() {
        let mut rng = rng_from_seed(11);
        let dec = decomp(&uniform_positive_ball(&mut rng, 10, 2));
        let report = fisher_polynomial(&dec, &[-0.3, 0.003], 0, 0.1, DEFAULT_PROB_FLOOR).unwrap();
        assert_eq!(report.info_matrix, DMatrix::zeros(2, 2));
        assert_eq!(report.rank, 0);
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let theta = [-0.3, 0.05];
        let lam0 = [3.0, 0.8];
        let (_, sens) = eigen_sensitivities(&theta, &lam0, 20, 0.1, 8).unwrap();
        let h = 1e-5;
        for a in 0..2 {
            let mut plus = theta;
            plus[a] += h;
            let mut minus = theta;
            minus[a] -= h;
            let fp = eigenvalue_flow(&plus, &lam0, 160, 0.1 / 8.0).unwrap();
            let fm = eigenvalue_flow(&minus, &lam0, 160, 0.1 / 8.0).unwrap();
            for i in 0..2 {
                let fd = (fp[i][160] - fm[i][160]) / (2.0 * h);
                let ode = sens[20][(i, a)];
                assert!((fd - ode).abs() <= 1e-4 * ode.abs(), "{fd} vs {ode}");
            }
        }
    }

    #[test]
    fn degenerate_initial_spectrum_is_rejected() {
        let dec = SpectralDecomp::from_parts(vec![0.5, 0.5], DMatrix::identity(4, 2)).unwrap();
        assert!(matches!(
            fisher_polynomial(&dec, &[-0.1], 5, 0.1, DEFAULT_PROB_FLOOR),
            Err(Error::DegenerateSpectrum { .. })
        ));
        assert!(fisher_polynomial(&dec, &[-0.1], 5, 0.1, 0.7).is_err());
    }

    #[test]
    fn crb_baseline_cases() {
        let rows = crb_baseline_check(&dmatrix![2.0, 0.0; 0.0, 5.0]);
        assert!(rows.iter().all(|r| r.slack.abs() < 1e-15 && r.holds));
        let info = dmatrix![2.0, 1.2; 1.2, 1.0];
        let inv = info.clone().try_inverse().unwrap();
        let rows = crb_baseline_check(&info);
        for (a, r) in rows.iter().enumerate() {
            assert!((r.inverse_diag - inv[(a, a)]).abs() < 1e-12);
            assert!(r.slack > 0.0 && r.holds);
        }
    }

    #[test]
    fn fisher_bound_holds_for_experiment_parameters() {
        let mut rng = rng_from_seed(12);
        let dec = decomp(&uniform_positive_ball(&mut rng, 50, 2));
        let report = fisher_polynomial(&dec, &[-0.3, 0.003], 50, 0.05, DEFAULT_PROB_FLOOR).unwrap();
        let min_eig = linalg::sym_eigen_desc(&report.info_matrix).0[1];
        assert!(min_eig >= -1e-10 * report.info_matrix.trace());
        assert!(crb_baseline_check(&report.info_matrix).iter().all(|r| r.holds));
    }
}
