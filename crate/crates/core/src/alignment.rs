//! Orthogonal Procrustes and trajectory alignment.
//!
//! Convention: [`procrustes`]`(A, B)` returns the orthogonal `Q` minimising
//! `|A Q - B|_F`, i.e. `Q` acts on the right of the frame being moved.
//! Reflections are allowed (full `O(d)`).

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::observation::EmbeddingSeries;

/// Cross-covariance singular values at or below this multiple of
/// `|A|_F |B|_F` leave the rotation underdetermined.
pub const CROSS_REL_TOL: f64 = 1e-12;

/// Anchor blocks with `sigma_d / sigma_1` below this are rejected.
pub const ANCHOR_COND_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMethod {
    Sequential,
    Anchor,
    None,
}

impl AlignMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlignMethod::Sequential => "sequential",
            AlignMethod::Anchor => "anchor",
            AlignMethod::None => "none",
        }
    }
}

impl fmt::Display for AlignMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// `Q_t` such that the aligned frame is `X_hat(t) Q_t`.
    pub gauges: Vec<DMatrix<f64>>,
    /// Filled by [`AlignmentReport::with_errors`].
    #[serde(default)]
    pub per_time_error: Vec<f64>,
    pub method: AlignMethod,
    #[serde(default)]
    pub anchor_set: Option<Vec<usize>>,
}

impl AlignmentReport {
    /// Frames multiplied by their gauges.
    pub fn apply(&self, series: &EmbeddingSeries) -> Result<EmbeddingSeries> {
        if self.gauges.len() != series.len() {
            return Err(Error::InvalidInput(format!(
                "{} gauges for {} frames",
                self.gauges.len(),
                series.len()
            )));
        }
        let frames = series.embeddings.iter().zip(&self.gauges).map(|(x, q)| x * q).collect();
        let mut out = EmbeddingSeries::new(frames, series.times.clone())?;
        out.seeds = series.seeds.clone();
        Ok(out)
    }

    /// Attach per-time errors against a ground-truth state sequence.
    pub fn with_errors(mut self, series: &EmbeddingSeries, truth: &[DMatrix<f64>]) -> Result<Self> {
        self.per_time_error = trajectory_error(&self.apply(series)?, truth)?;
        Ok(self)
    }
}

/// `argmin_{Q in O(d)} |A Q - B|_F = U V^T` where `A^T B = U S V^T`.
pub fn procrustes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("procrustes", a.shape(), b.shape()));
    }
    let cross = a.transpose() * b;
    let svd = cross.svd(true, true);
    let sigma = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = CROSS_REL_TOL * a.norm() * b.norm();
    if !(sigma > threshold) {
        return Err(Error::DegenerateCross {
            frame: None,
            sigma,
            threshold,
        });
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    Ok(u * v_t)
}

fn tag_frame(err: Error, frame: usize) -> Error {
    match err {
        Error::DegenerateCross { sigma, threshold, .. } => Error::DegenerateCross {
            frame: Some(frame),
            sigma,
            threshold,
        },
        other => other,
    }
}

/// Identity gauges: the raw series as given.
pub fn align_none(series: &EmbeddingSeries) -> AlignmentReport {
    AlignmentReport {
        gauges: vec![DMatrix::identity(series.d, series.d); series.len()],
        per_time_error: Vec::new(),
        method: AlignMethod::None,
        anchor_set: None,
    }
}

/// Chain alignment: frame `t + 1` is rotated onto the already aligned frame `t`.
pub fn align_sequential(series: &EmbeddingSeries) -> Result<AlignmentReport> {
    let d = series.d;
    let mut gauges = Vec::with_capacity(series.len());
    gauges.push(DMatrix::identity(d, d));
    let mut prev = series.embeddings[0].clone();
    for t in 1..series.len() {
        let q = procrustes(&series.embeddings[t], &prev).map_err(|e| tag_frame(e, t))?;
        prev = &series.embeddings[t] * &q;
        gauges.push(q);
    }
    Ok(AlignmentReport {
        gauges,
        per_time_error: Vec::new(),
        method: AlignMethod::Sequential,
        anchor_set: None,
    })
}

/// Align every frame to the reference frame using the anchor rows only.
pub fn align_anchor(series: &EmbeddingSeries, anchors: &[usize], ref_index: usize) -> Result<AlignmentReport> {
    let n = series.n();
    let d = series.d;
    if anchors.is_empty() {
        return Err(Error::AnchorRankDeficient { anchors: 0, ratio: 0.0 });
    }
    if let Some(&bad) = anchors.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidInput(format!("anchor index {bad} out of range for n = {n}")));
    }
    if ref_index >= series.len() {
        return Err(Error::InvalidInput(format!("reference frame {ref_index} out of range")));
    }
    let reference = linalg::select_rows(&series.embeddings[ref_index], anchors);
    let sv = linalg::singular_values(&reference);
    let ratio = if anchors.len() < d || sv[0] <= 0.0 {
        0.0
    } else {
        sv[d - 1] / sv[0]
    };
    if !(ratio >= ANCHOR_COND_TOL) {
        return Err(Error::AnchorRankDeficient {
            anchors: anchors.len(),
            ratio,
        });
    }
    let gauges = series
        .embeddings
        .iter()
        .enumerate()
        .map(|(t, x)| procrustes(&linalg::select_rows(x, anchors), &reference).map_err(|e| tag_frame(e, t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignmentReport {
        gauges,
        per_time_error: Vec::new(),
        method: AlignMethod::Anchor,
        anchor_set: Some(anchors.to_vec()),
    })
}

/// Single best gauge `Q*` mapping the stacked truth onto the stacked aligned
/// frames, then `err(t) = |aligned(t) - truth(t) Q*|_F / n`.
pub fn trajectory_error(aligned: &EmbeddingSeries, truth: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    if aligned.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "trajectory_error frames",
            expected: aligned.len().to_string(),
            found: truth.len().to_string(),
        });
    }
    let shape = aligned.embeddings[0].shape();
    if let Some(bad) = truth.iter().find(|x| x.shape() != shape) {
        return Err(Error::shape("trajectory_error", shape, bad.shape()));
    }
    let q = global_gauge(aligned, truth)?;
    let n = shape.0 as f64;
    Ok(aligned
        .embeddings
        .iter()
        .zip(truth)
        .map(|(a, x)| (a - x * &q).norm() / n)
        .collect())
}

/// Procrustes gauge taking the stacked `truth` onto the stacked `aligned` frames.
pub fn global_gauge(aligned: &EmbeddingSeries, truth: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let stacked_truth = linalg::vstack(truth);
    let stacked_aligned = linalg::vstack(&aligned.embeddings);
    procrustes(&stacked_truth, &stacked_aligned)
}

/// `|skew(X(t)^T V(t))|_F` with `V(t)` a finite-difference velocity:
/// central differences at interior frames, or a single forward difference
/// when only two frames are given.
pub fn asymmetry_diagnostic(series: &EmbeddingSeries, dt: f64) -> Result<Vec<f64>> {
    let frames = &series.embeddings;
    match frames.len() {
        0 | 1 => Err(Error::InsufficientSamples {
            samples: frames.len(),
            features: 2,
        }),
        2 => {
            let v = (&frames[1] - &frames[0]) / dt;
            Ok(vec![linalg::skew(&(frames[0].transpose() * v)).norm()])
        }
        len => Ok((1..len - 1)
            .map(|t| {
                let v = (&frames[t + 1] - &frames[t - 1]) / (2.0 * dt);
                linalg::skew(&(frames[t].transpose() * v)).norm()
            })
            .collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, DynamicsSpec};
    use crate::observation::inject_gauge_jitter;
    use crate::random::{gaussian_matrix, haar_orthogonal, rng_from_seed, uniform_positive_ball};
    use nalgebra::dmatrix;

    fn rot(theta: f64) -> DMatrix<f64> {
        dmatrix![theta.cos(), -theta.sin(); theta.sin(), theta.cos()]
    }

    fn series_of(frames: Vec<DMatrix<f64>>) -> EmbeddingSeries {
        let times = (0..frames.len()).map(|t| t as f64).collect();
        EmbeddingSeries::new(frames, times).unwrap()
    }

    #[test]
    fn procrustes_identity_and_recovery() {
        let mut rng = rng_from_seed(1);
        let a = gaussian_matrix(&mut rng, 10, 3);
        let q = procrustes(&a, &a).unwrap();
        assert!((q - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        let q0 = haar_orthogonal(&mut rng, 3);
        let q = procrustes(&a, &(&a * &q0)).unwrap();
        assert!((q - q0).amax() < 1e-10);
    }

    #[test]
    fn single_row_is_degenerate() {
        let err = procrustes(&dmatrix![1.0, 0.0], &dmatrix![0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateCross { frame: None, .. }));
    }

    #[test]
    fn procrustes_beats_perturbations() {
        let mut rng = rng_from_seed(2);
        let a = gaussian_matrix(&mut rng, 8, 2);
        let b = gaussian_matrix(&mut rng, 8, 2);
        let q = procrustes(&a, &b).unwrap();
        assert!((q.transpose() * &q - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        let best = (&a * &q - &b).norm();
        for k in 0..100 {
            let other = &q * rot(0.01 * (k as f64 + 1.0));
            assert!(best <= (&a * other - &b).norm() + 1e-12);
        }
    }

    #[test]
    fn sequential_recovers_rigid_jittered_series() {
        let mut rng = rng_from_seed(3);
        let x = gaussian_matrix(&mut rng, 12, 3);
        let series = inject_gauge_jitter(&series_of(vec![x.clone(); 10]), 4);
        let report = align_sequential(&series).unwrap();
        let aligned = report.apply(&series).unwrap();
        for frame in &aligned.embeddings {
            assert!((frame - &aligned.embeddings[0]).amax() < 1e-10);
        }
        for q in &report.gauges {
            assert!((q.transpose() * q - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
        }
    }

    #[test]
    fn sequential_single_frame() {
        let series = series_of(vec![dmatrix![1.0, 0.0; 0.0, 1.0]]);
        let report = align_sequential(&series).unwrap();
        assert_eq!(report.gauges, vec![DMatrix::identity(2, 2)]);
    }

    #[test]
    fn sequential_reports_degenerate_frame() {
        let x = dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0];
        let series = series_of(vec![x.clone(), x, DMatrix::zeros(3, 2)]);
        assert!(matches!(
            align_sequential(&series),
            Err(Error::DegenerateCross { frame: Some(2), .. })
        ));
    }

    #[test]
    fn anchor_alignment_is_exact_on_noiseless_data() {
        let mut rng = rng_from_seed(5);
        let x0 = uniform_positive_ball(&mut rng, 30, 2);
        let anchors: Vec<usize> = (0..6).collect();
        let spec = DynamicsSpec::polynomial(vec![-0.3, 0.003]).with_anchors(anchors.clone(), 0.0);
        let traj = integrate(&spec, &x0, 30, 0.05).unwrap();
        let series = inject_gauge_jitter(&EmbeddingSeries::from_trajectory(&traj).unwrap(), 9);
        let report = align_anchor(&series, &anchors, 0).unwrap().with_errors(&series, &traj.states).unwrap();
        assert!(report.per_time_error.iter().all(|&e| e < 1e-10));
    }

    #[test]
    fn one_anchor_in_two_dimensions_is_rejected() {
        let mut rng = rng_from_seed(6);
        let series = series_of(vec![gaussian_matrix(&mut rng, 5, 2); 3]);
        assert!(matches!(
            align_anchor(&series, &[2], 0),
            Err(Error::AnchorRankDeficient { anchors: 1, .. })
        ));
        assert!(align_anchor(&series, &[], 0).is_err());
    }

    #[test]
    fn reference_choice_only_changes_global_gauge() {
        let mut rng = rng_from_seed(7);
        let x0 = uniform_positive_ball(&mut rng, 25, 2);
        let anchors = vec![0, 1, 2, 3, 4];
        let spec = DynamicsSpec::polynomial(vec![-0.3, 0.003]).with_anchors(anchors.clone(), 0.0);
        let traj = integrate(&spec, &x0, 10, 0.05).unwrap();
        // Noise on the moving rows only; anchor rows stay exact.
        let noisy: Vec<_> = traj
            .states
            .iter()
            .map(|x| {
                let mut noise = gaussian_matrix(&mut rng, 25, 2) * 0.01;
                for &i in &anchors {
                    noise.row_mut(i).fill(0.0);
                }
                x + noise
            })
            .collect();
        let series = inject_gauge_jitter(&series_of(noisy), 2);
        let e0 = align_anchor(&series, &anchors, 0).unwrap().with_errors(&series, &traj.states).unwrap();
        let e5 = align_anchor(&series, &anchors, 5).unwrap().with_errors(&series, &traj.states).unwrap();
        for (a, b) in e0.per_time_error.iter().zip(&e5.per_time_error) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn trajectory_error_cases() {
        let mut rng = rng_from_seed(8);
        let frames: Vec<_> = (0..40).map(|_| uniform_positive_ball(&mut rng, 20, 2)).collect();
        let same = trajectory_error(&series_of(frames.clone()), &frames).unwrap();
        assert!(same.iter().all(|&e| e < 1e-14));

        let q = haar_orthogonal(&mut rng, 2);
        let rotated: Vec<_> = frames.iter().map(|x| x * &q).collect();
        assert!(trajectory_error(&series_of(rotated), &frames).unwrap().iter().all(|&e| e < 1e-12));

        let theta = 0.1;
        let mut perturbed = frames.clone();
        perturbed[7] = &frames[7] * rot(theta);
        let err = trajectory_error(&series_of(perturbed), &frames).unwrap();
        let expected = 2.0 * (theta / 2.0).sin() * frames[7].norm() / 20.0;
        assert!((err[7] - expected).abs() < 0.05 * expected, "{} vs {expected}", err[7]);
        assert!(err[0] < 0.1 * expected);

        assert!(trajectory_error(&series_of(frames[..3].to_vec()), &frames).is_err());
    }

    fn series_for(spec: &DynamicsSpec, dt: f64, steps: usize) -> EmbeddingSeries {
        let mut rng = rng_from_seed(11);
        let x0 = uniform_positive_ball(&mut rng, 20, 2);
        EmbeddingSeries::from_trajectory(&integrate(spec, &x0, steps, dt).unwrap()).unwrap()
    }

    fn polynomial_series(dt: f64, steps: usize) -> EmbeddingSeries {
        series_for(&DynamicsSpec::polynomial(vec![-0.3, 0.05]), dt, steps)
    }

    fn rotate_frames(series: &EmbeddingSeries, omega: f64) -> EmbeddingSeries {
        let frames = series.embeddings.iter().zip(&series.times).map(|(x, &t)| x * rot(omega * t)).collect();
        EmbeddingSeries::new(frames, series.times.clone()).unwrap()
    }

    #[test]
    fn asymmetry_is_second_order_without_gauge() {
        // RK4 steps of a polynomial flow are symmetric polynomials in P applied
        // to X, so the discrete diagnostic vanishes to roundoff.
        let poly = polynomial_series(0.1, 10);
        assert!(asymmetry_diagnostic(&poly, 0.1).unwrap().iter().all(|&v| v < 1e-13));
        let lap = DynamicsSpec::laplacian();
        let a = asymmetry_diagnostic(&series_for(&lap, 0.1, 10), 0.1).unwrap()[0];
        let b = asymmetry_diagnostic(&series_for(&lap, 0.05, 20), 0.05).unwrap()[1];
        let ratio = a / b;
        assert!(ratio >= 3.0, "{a} {b}");
    }

    #[test]
    fn rotating_gauge_matches_closed_form() {
        let series = polynomial_series(0.01, 20);
        for omega in [0.1, 0.5, 1.0] {
            let diag = asymmetry_diagnostic(&rotate_frames(&series, omega), 0.01).unwrap();
            for (k, value) in diag.iter().enumerate() {
                let x = &series.embeddings[k + 1];
                let expected = omega * (x.transpose() * x).trace() / 2f64.sqrt();
                assert!((value - expected).abs() < 1e-3 * expected, "{value} vs {expected}");
            }
        }
    }

    #[test]
    fn constant_gauge_leaves_diagnostic_unchanged() {
        let series = polynomial_series(0.05, 10);
        let mut rng = rng_from_seed(12);
        let q = haar_orthogonal(&mut rng, 2);
        let frames = series.embeddings.iter().map(|x| x * &q).collect();
        let fixed = EmbeddingSeries::new(frames, series.times.clone()).unwrap();
        let a = asymmetry_diagnostic(&series, 0.05).unwrap();
        let b = asymmetry_diagnostic(&fixed, 0.05).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(asymmetry_diagnostic(&series_of(vec![DMatrix::zeros(2, 2)]), 0.1).is_err());
    }
}
