//! Bernoulli graph sampling, sample averaging, adjacency spectral embedding
//! and explicit per-frame gauge jitter.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::model::{self, ProbMatrix, DEFAULT_GAP_TOL};
use crate::random::{derive_seed, haar_orthogonal, rng_from_seed};

/// Slack allowed outside `[0, 1]` before a probability is rejected.
pub const PROB_SLACK: f64 = 1e-12;

/// One sampled adjacency matrix. The diagonal is sampled too, so
/// `E[A] = P` holds entrywise.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub adjacency: DMatrix<f64>,
    pub seed: u64,
    pub source_time: f64,
}

/// Draw `A_ij ~ Bernoulli(P_ij)` for `i <= j` and mirror.
pub fn sample_adjacency(p: &ProbMatrix, seed: u64, source_time: f64) -> Result<GraphSample> {
    let pm = p.matrix();
    let n = pm.nrows();
    for j in 0..n {
        for i in 0..=j {
            let v = pm[(i, j)];
            if !(v >= -PROB_SLACK && v <= 1.0 + PROB_SLACK) {
                return Err(Error::InvalidProbability { row: i, col: j, value: v });
            }
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let u: f64 = rng.random();
            if u < pm[(i, j)] {
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
        }
    }
    Ok(GraphSample {
        adjacency: a,
        seed,
        source_time,
    })
}

/// Entrywise mean of the sampled adjacency matrices.
pub fn average_adjacency(samples: &[GraphSample]) -> Result<DMatrix<f64>> {
    let first = samples.first().ok_or(Error::EmptyInput("adjacency samples"))?;
    let shape = first.adjacency.shape();
    let mut acc = DMatrix::zeros(shape.0, shape.1);
    for s in samples {
        if s.adjacency.shape() != shape {
            return Err(Error::shape("average_adjacency", shape, s.adjacency.shape()));
        }
        acc += &s.adjacency;
    }
    Ok(acc / samples.len() as f64)
}

/// Adjacency spectral embedding `U_d |Lambda_d|^{1/2}` of a symmetric matrix.
pub fn ase(a: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::shape("ase", (a.nrows(), a.nrows()), a.shape()));
    }
    let scale = a.amax().max(1.0);
    if crate::linalg::asymmetry(a) > 1e-12 * scale {
        return Err(Error::InvalidInput("ase input is not symmetric".into()));
    }
    Ok(model::spectral_decompose_matrix(a, d, DEFAULT_GAP_TOL)?.scaled_embedding())
}

/// Time-indexed embeddings `X_hat(t)`, optionally with the gauges that were
/// injected on top of the raw embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSeries {
    pub embeddings: Vec<DMatrix<f64>>,
    pub times: Vec<f64>,
    pub d: usize,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub gauges_applied: Option<Vec<DMatrix<f64>>>,
}

impl EmbeddingSeries {
    pub fn new(embeddings: Vec<DMatrix<f64>>, times: Vec<f64>) -> Result<Self> {
        let first = embeddings.first().ok_or(Error::EmptyInput("embedding series"))?;
        let shape = first.shape();
        if let Some(bad) = embeddings.iter().find(|e| e.shape() != shape) {
            return Err(Error::shape("embedding series", shape, bad.shape()));
        }
        if times.len() != embeddings.len() {
            return Err(Error::InvalidInput(format!(
                "{} embeddings but {} time stamps",
                embeddings.len(),
                times.len()
            )));
        }
        Ok(Self {
            d: shape.1,
            embeddings,
            times,
            seeds: Vec::new(),
            gauges_applied: None,
        })
    }

    /// Series holding the states of a latent trajectory verbatim.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        Self::new(traj.states.clone(), traj.times.clone())
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn n(&self) -> usize {
        self.embeddings[0].nrows()
    }
}

/// Sample `m` graphs per frame of a latent trajectory, average, and embed.
/// Seeds are derived from `(master, rep, frame, sample)`.
pub fn observe_trajectory(traj: &Trajectory, d: usize, m: usize, master: u64, rep: u64) -> Result<EmbeddingSeries> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one sample per frame".into()));
    }
    let mut embeddings = Vec::with_capacity(traj.len());
    let mut seeds = Vec::with_capacity(traj.len() * m);
    for (t, (x, &time)) in traj.states.iter().zip(&traj.times).enumerate() {
        let p = model::probability_matrix(x);
        let samples = (0..m)
            .map(|s| {
                let seed = derive_seed(master, &[rep, t as u64, s as u64]);
                seeds.push(seed);
                sample_adjacency(&p, seed, time)
            })
            .collect::<Result<Vec<_>>>()?;
        embeddings.push(ase(&average_adjacency(&samples)?, d)?);
    }
    let mut series = EmbeddingSeries::new(embeddings, traj.times.clone())?;
    series.seeds = seeds;
    Ok(series)
}

/// Embed the exact `P(t) = X(t) X(t)^T` of each frame (no sampling noise).
pub fn exact_embeddings(traj: &Trajectory, d: usize) -> Result<EmbeddingSeries> {
    let embeddings = traj
        .states
        .iter()
        .map(|x| ase(model::probability_matrix(x).matrix(), d))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSeries::new(embeddings, traj.times.clone())
}

/// Right-multiply each frame by an independent Haar-distributed orthogonal
/// matrix; frame `t` uses the seed `derive_seed(seed, [t])`. The applied
/// matrices are composed into `gauges_applied`.
pub fn inject_gauge_jitter(series: &EmbeddingSeries, seed: u64) -> EmbeddingSeries {
    let d = series.d;
    let mut out = series.clone();
    let mut gauges = Vec::with_capacity(series.len());
    for (t, frame) in out.embeddings.iter_mut().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, &[t as u64]));
        let r = haar_orthogonal(&mut rng, d);
        *frame = &*frame * &r;
        let total = match &series.gauges_applied {
            Some(prev) => &prev[t] * &r,
            None => r,
        };
        gauges.push(total);
    }
    out.gauges_applied = Some(gauges);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, DynamicsSpec};
    use crate::model::probability_matrix;
    use crate::random::uniform_positive_ball;
    use nalgebra::dmatrix;

    fn constant(n: usize, v: f64) -> ProbMatrix {
        ProbMatrix::new(DMatrix::from_element(n, n, v), n).unwrap()
    }

    #[test]
    fn degenerate_probabilities_are_deterministic() {
        let ones = sample_adjacency(&constant(6, 1.0), 1, 0.0).unwrap();
        assert_eq!(ones.adjacency, DMatrix::from_element(6, 6, 1.0));
        let zeros = sample_adjacency(&constant(6, 0.0), 1, 0.0).unwrap();
        assert_eq!(zeros.adjacency, DMatrix::zeros(6, 6));
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        let mut p = DMatrix::from_element(3, 3, 0.5);
        p[(0, 2)] = 1.1;
        p[(2, 0)] = 1.1;
        let pm = ProbMatrix::new(p, 3).unwrap();
        assert!(matches!(
            sample_adjacency(&pm, 0, 0.0),
            Err(Error::InvalidProbability { row: 0, col: 2, .. })
        ));
    }

    #[test]
    fn samples_are_symmetric_binary_and_seeded() {
        let p = constant(30, 0.3);
        let a = sample_adjacency(&p, 99, 0.5).unwrap();
        assert_eq!(a.adjacency, a.adjacency.transpose());
        assert!(a.adjacency.iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(a, sample_adjacency(&p, 99, 0.5).unwrap());
        assert_ne!(a.adjacency, sample_adjacency(&p, 100, 0.5).unwrap().adjacency);
    }

    #[test]
    fn half_density_monte_carlo() {
        let p = constant(50, 0.5);
        let mut total = 0.0;
        let k = 200;
        for s in 0..k {
            total += sample_adjacency(&p, s, 0.0).unwrap().adjacency.sum();
        }
        // 10^4 entry draws per sample: 3 sigma on the mean density over all
        // 2 * 10^6 counted cells is well inside 0.01.
        let density = total / (k as f64 * 2500.0);
        assert!((density - 0.5).abs() < 0.01, "{density}");
    }

    #[test]
    fn averaging_matches_binomial_variance() {
        let p = 0.3;
        let m = 5;
        let pm = constant(40, p);
        let mut means = Vec::new();
        for rep in 0..40u64 {
            let samples: Vec<_> = (0..m).map(|s| sample_adjacency(&pm, rep * 100 + s, 0.0).unwrap()).collect();
            let avg = average_adjacency(&samples).unwrap();
            for j in 0..40 {
                for i in 0..j {
                    means.push(avg[(i, j)]);
                }
            }
        }
        let mu = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
        let expected = p * (1.0 - p) / m as f64;
        assert!((var / expected - 1.0).abs() < 0.05, "var {var} expected {expected}");
    }

    #[test]
    fn averaging_edge_cases() {
        assert!(matches!(average_adjacency(&[]), Err(Error::EmptyInput(_))));
        let s = sample_adjacency(&constant(4, 0.5), 3, 0.0).unwrap();
        assert_eq!(average_adjacency(std::slice::from_ref(&s)).unwrap(), s.adjacency);
        let ones = GraphSample {
            adjacency: DMatrix::from_element(3, 3, 1.0),
            seed: 0,
            source_time: 0.0,
        };
        let zeros = GraphSample {
            adjacency: DMatrix::zeros(3, 3),
            seed: 0,
            source_time: 0.0,
        };
        assert_eq!(average_adjacency(&[ones, zeros]).unwrap(), DMatrix::from_element(3, 3, 0.5));
    }

    #[test]
    fn unbiased_mean_at_four_sigma() {
        let mut rng = rng_from_seed(5);
        let x = uniform_positive_ball(&mut rng, 20, 2);
        let p = probability_matrix(&x);
        let k = 10_000u64;
        let mut acc = DMatrix::zeros(20, 20);
        for s in 0..k {
            acc += sample_adjacency(&p, derive_seed(77, &[s]), 0.0).unwrap().adjacency;
        }
        let mean = acc / k as f64;
        for i in 0..20 {
            for j in 0..20 {
                let pij = p.matrix()[(i, j)];
                let sd = (pij * (1.0 - pij) / k as f64).sqrt();
                assert!((mean[(i, j)] - pij).abs() <= 4.0 * sd + 1e-12);
            }
        }
    }

    #[test]
    fn ase_scalar() {
        let e = ase(&dmatrix![4.0], 1).unwrap();
        assert_eq!(e, dmatrix![2.0]);
    }

    #[test]
    fn ase_reproduces_exact_low_rank() {
        let mut rng = rng_from_seed(6);
        let x = uniform_positive_ball(&mut rng, 25, 3);
        let p = probability_matrix(&x).into_matrix();
        let e = ase(&p, 3).unwrap();
        assert!((&e * e.transpose() - &p).norm() <= 1e-8);
    }

    #[test]
    fn ase_rejects_asymmetric_input() {
        assert!(ase(&dmatrix![1.0, 0.5; 0.0, 1.0], 1).is_err());
    }

    #[test]
    fn jitter_in_one_dimension_flips_signs() {
        let x = dmatrix![0.5; 0.2; 0.1];
        let series = EmbeddingSeries::new(vec![x.clone(); 16], (0..16).map(f64::from).collect()).unwrap();
        let jittered = inject_gauge_jitter(&series, 8);
        for (frame, g) in jittered.embeddings.iter().zip(jittered.gauges_applied.as_ref().unwrap()) {
            assert_eq!(g[(0, 0)].abs(), 1.0);
            assert_eq!(frame, &(&x * g[(0, 0)]));
        }
    }

    #[test]
    fn jitter_is_invisible_and_invertible() {
        let mut rng = rng_from_seed(9);
        let frames: Vec<_> = (0..5).map(|_| uniform_positive_ball(&mut rng, 12, 3)).collect();
        let series = EmbeddingSeries::new(frames.clone(), (0..5).map(f64::from).collect()).unwrap();
        let jittered = inject_gauge_jitter(&series, 21);
        let gauges = jittered.gauges_applied.as_ref().unwrap();
        for ((orig, jit), g) in frames.iter().zip(&jittered.embeddings).zip(gauges) {
            assert!((orig * orig.transpose() - jit * jit.transpose()).amax() < 1e-12);
            assert!((jit * g.transpose() - orig).amax() < 1e-14);
        }
    }

    #[test]
    fn jitter_breaks_finite_differences() {
        let mut rng = rng_from_seed(10);
        let x0 = uniform_positive_ball(&mut rng, 30, 2);
        let spec = DynamicsSpec::polynomial(vec![-0.3, 0.003]);
        let fine = integrate(&spec, &x0, 40, 0.005).unwrap();
        let truth = EmbeddingSeries::from_trajectory(&fine).unwrap();
        let jittered = inject_gauge_jitter(&truth, 3);
        let speed = |s: &EmbeddingSeries, stride: usize, dt: f64| {
            let h = stride as f64 * dt;
            let pairs: Vec<f64> = (0..=(s.len() - 1 - stride))
                .step_by(stride)
                .map(|t| ((&s.embeddings[t + stride] - &s.embeddings[t]) / h).norm())
                .collect();
            pairs.iter().sum::<f64>() / pairs.len() as f64
        };
        let true_speed = crate::dynamics::eval_field(&spec, &x0).unwrap().norm();
        // Clean differences converge to |X'|; jittered ones grow like 1/dt.
        let first_step = ((&truth.embeddings[1] - &truth.embeddings[0]) / 0.005).norm();
        assert!((first_step - true_speed).abs() < 0.01 * true_speed);
        let coarse = speed(&jittered, 2, 0.005);
        let finer = speed(&jittered, 1, 0.005);
        assert!(finer / coarse > 1.5 && finer > 10.0 * true_speed);
    }

    #[test]
    fn observed_series_is_deterministic() {
        let mut rng = rng_from_seed(12);
        let x0 = uniform_positive_ball(&mut rng, 40, 2);
        let traj = integrate(&DynamicsSpec::polynomial(vec![-0.3, 0.003]), &x0, 3, 0.05).unwrap();
        let a = observe_trajectory(&traj, 2, 3, 5, 0).unwrap();
        let b = observe_trajectory(&traj, 2, 3, 5, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seeds.len(), 12);
        let c = observe_trajectory(&traj, 2, 3, 5, 1).unwrap();
        assert_ne!(a.embeddings, c.embeddings);
    }
}
