//! Vector fields on latent configurations, the induced P-velocity, and a
//! fixed-step RK4 integrator.
//!
//! All fields act on the `n x d` position matrix `X` (rows are nodes). Fields
//! that are polynomials in `P = X X^T` are evaluated without forming `P`,
//! using `P Y = X (X^T Y)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Vector-field family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DynamicsFamily {
    /// `X' = (sum_k alpha_k P^k) X`.
    Polynomial { coefficients: Vec<f64> },
    /// `X' = -(D - P) X`, `D = diag(P 1)`.
    Laplacian,
    /// `X' = P X`.
    MessagePassingAttraction,
    /// `x_i' = (x_i - mean(x)) A` for skew `A`.
    CentroidCirculation { generator: Vec<Vec<f64>> },
    /// Community spiral in `d = 3`:
    /// `x_i' = (-gamma + beta |x_i - mu_k|^2)(x_i - mu_k) + omega J (x_i - mu_k)`
    /// where `J` generates rotation about `(1, 1, 1)/sqrt(3)`.
    DampedSpiral {
        gamma: f64,
        beta: f64,
        omega: f64,
        centroids: Vec<Vec<f64>>,
        assignments: Vec<usize>,
    },
    /// `X' = X Omega` for skew `Omega`; leaves `P` unchanged.
    PureGaugeRotation { generator: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    #[serde(flatten)]
    pub family: DynamicsFamily,
    /// Nodes whose velocity is replaced by `anchor_drift` times the field value
    /// (zero for frozen anchors).
    #[serde(default)]
    pub anchors: Option<Vec<usize>>,
    #[serde(default)]
    pub anchor_drift: f64,
}

impl DynamicsSpec {
    pub fn new(family: DynamicsFamily) -> Self {
        Self {
            family,
            anchors: None,
            anchor_drift: 0.0,
        }
    }

    pub fn polynomial(coefficients: Vec<f64>) -> Self {
        Self::new(DynamicsFamily::Polynomial { coefficients })
    }

    pub fn laplacian() -> Self {
        Self::new(DynamicsFamily::Laplacian)
    }

    pub fn pure_gauge(generator: &DMatrix<f64>) -> Self {
        Self::new(DynamicsFamily::PureGaugeRotation {
            generator: to_rows(generator),
        })
    }

    /// Spiral dynamics with each node assigned to its nearest centroid in `x0`.
    pub fn damped_spiral(gamma: f64, beta: f64, omega: f64, centroids: Vec<Vec<f64>>, x0: &DMatrix<f64>) -> Self {
        let assignments = nearest_centroid(x0, &centroids);
        Self::new(DynamicsFamily::DampedSpiral {
            gamma,
            beta,
            omega,
            centroids,
            assignments,
        })
    }

    pub fn with_anchors(mut self, anchors: Vec<usize>, drift: f64) -> Self {
        self.anchors = Some(anchors);
        self.anchor_drift = drift;
        self
    }

    /// Check parameters against a configuration of shape `n x d`.
    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        match &self.family {
            DynamicsFamily::Polynomial { coefficients } => {
                if coefficients.is_empty() {
                    return Err(Error::InvalidInput("polynomial dynamics need at least one coefficient".into()));
                }
            }
            DynamicsFamily::CentroidCirculation { generator } | DynamicsFamily::PureGaugeRotation { generator } => {
                let a = from_rows(generator, "generator")?;
                if a.shape() != (d, d) {
                    return Err(Error::shape("skew generator", (d, d), a.shape()));
                }
                if linalg::skew_defect(&a) > 1e-12 {
                    return Err(Error::InvalidInput("generator is not skew-symmetric".into()));
                }
            }
            DynamicsFamily::DampedSpiral {
                centroids, assignments, ..
            } => {
                if d != 3 {
                    return Err(Error::shape("damped spiral", (n, 3), (n, d)));
                }
                if centroids.iter().any(|c| c.len() != 3) {
                    return Err(Error::InvalidInput("spiral centroids must be 3-vectors".into()));
                }
                if assignments.len() != n || assignments.iter().any(|&k| k >= centroids.len()) {
                    return Err(Error::InvalidInput("spiral assignments do not match nodes/centroids".into()));
                }
            }
            DynamicsFamily::Laplacian | DynamicsFamily::MessagePassingAttraction => {}
        }
        if let Some(anchors) = &self.anchors {
            if let Some(&bad) = anchors.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidInput(format!("anchor index {bad} out of range for n = {n}")));
            }
        }
        Ok(())
    }
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map(|v| v.len()).unwrap_or(0);
    if rows.iter().any(|v| v.len() != c) {
        return Err(Error::InvalidInput(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Rotation generator about the `(1, 1, 1)/sqrt(3)` axis.
pub fn spiral_generator() -> DMatrix<f64> {
    let s = 1.0 / 3f64.sqrt();
    DMatrix::from_row_slice(3, 3, &[0.0, -s, s, s, 0.0, -s, -s, s, 0.0])
}

/// Spiral velocity for a single offset `delta = x - mu` (column convention).
pub fn spiral_velocity(delta: &DVector<f64>, gamma: f64, beta: f64, omega: f64) -> DVector<f64> {
    let r2 = delta.norm_squared();
    delta * (-gamma + beta * r2) + spiral_generator() * delta * omega
}

pub fn nearest_centroid(x: &DMatrix<f64>, centroids: &[Vec<f64>]) -> Vec<usize> {
    x.row_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, c) in centroids.iter().enumerate() {
                let dist: f64 = row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best_d {
                    best_d = dist;
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Degree vector `P 1 = X (X^T 1)`.
fn degrees(x: &DMatrix<f64>) -> DVector<f64> {
    let col_sums = x.row_sum().transpose();
    x * col_sums
}

fn polynomial_field(coefficients: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x * coefficients[0];
    let mut power = x.clone();
    for &a in &coefficients[1..] {
        power = x * (x.transpose() * &power);
        out += &power * a;
    }
    out
}

/// Velocity `X'` for the given family at `X`, with anchor rows applied last.
pub fn eval_field(spec: &DynamicsSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    spec.validate(n, d)?;
    let mut v = match &spec.family {
        DynamicsFamily::Polynomial { coefficients } => polynomial_field(coefficients, x),
        DynamicsFamily::Laplacian => {
            let px = x * (x.transpose() * x);
            let deg = degrees(x);
            let mut dx = x.clone();
            for (i, mut row) in dx.row_iter_mut().enumerate() {
                row *= deg[i];
            }
            px - dx
        }
        DynamicsFamily::MessagePassingAttraction => x * (x.transpose() * x),
        DynamicsFamily::CentroidCirculation { generator } => {
            let a = from_rows(generator, "generator")?;
            let mean = x.row_mean();
            let mut centered = x.clone();
            for mut row in centered.row_iter_mut() {
                row -= &mean;
            }
            centered * a
        }
        DynamicsFamily::PureGaugeRotation { generator } => x * from_rows(generator, "generator")?,
        DynamicsFamily::DampedSpiral {
            gamma,
            beta,
            omega,
            centroids,
            assignments,
        } => {
            let j = spiral_generator();
            let mut out = DMatrix::zeros(n, d);
            for i in 0..n {
                let mu = &centroids[assignments[i]];
                let delta = DVector::from_fn(3, |k, _| x[(i, k)] - mu[k]);
                let r2 = delta.norm_squared();
                let vel = &delta * (-gamma + beta * r2) + &j * &delta * *omega;
                for k in 0..3 {
                    out[(i, k)] = vel[k];
                }
            }
            out
        }
    };
    if let Some(anchors) = &spec.anchors {
        for &i in anchors {
            let mut row = v.row_mut(i);
            row *= spec.anchor_drift;
        }
    }
    Ok(v)
}

/// `P' = F X^T + X F^T` for a velocity `F` at `X`.
pub fn induced_p_velocity(f: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if f.shape() != x.shape() {
        return Err(Error::shape("induced_p_velocity", x.shape(), f.shape()));
    }
    let fx = f * x.transpose();
    Ok(&fx + fx.transpose())
}

/// Time-indexed sequence of states on a uniform grid.
///
/// States are either latent configurations (`n x d`) or probability
/// matrices (`n x n`); [`Trajectory::probability_states`] maps the former to
/// the latter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<DMatrix<f64>>,
    pub times: Vec<f64>,
    pub dt: f64,
    #[serde(default)]
    pub spec: Option<DynamicsSpec>,
}

impl Trajectory {
    pub fn new(states: Vec<DMatrix<f64>>, dt: f64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyInput("trajectory"));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let times = (0..states.len()).map(|k| k as f64 * dt).collect();
        Ok(Self {
            states,
            times,
            dt,
            spec: None,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Checks equal lengths, strictly increasing and uniform times.
    pub fn check_grid(&self) -> Result<()> {
        if self.states.len() != self.times.len() || self.states.is_empty() {
            return Err(Error::InvalidInput("trajectory states/times length mismatch".into()));
        }
        for w in self.times.windows(2) {
            let h = w[1] - w[0];
            if !(h > 0.0) || (h - self.dt).abs() > 1e-12 * self.dt.max(1.0) * (1.0 + w[1].abs()) {
                return Err(Error::InvalidInput("trajectory times are not a uniform grid".into()));
            }
        }
        Ok(())
    }

    pub fn probability_states(&self) -> Trajectory {
        Trajectory {
            states: self.states.iter().map(|x| crate::model::probability_matrix(x).into_matrix()).collect(),
            times: self.times.clone(),
            dt: self.dt,
            spec: self.spec.clone(),
        }
    }
}

/// One classical RK4 step for a matrix ODE `Y' = f(Y)`.
pub fn rk4_step<F>(f: &F, y: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let k1 = f(y)?;
    let k2 = f(&(y + &k1 * (dt / 2.0)))?;
    let k3 = f(&(y + &k2 * (dt / 2.0)))?;
    let k4 = f(&(y + &k3 * dt))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Fixed-step RK4 trajectory with `steps + 1` states starting at `x0`.
pub fn integrate(spec: &DynamicsSpec, x0: &DMatrix<f64>, steps: usize, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0) || steps == 0 {
        return Err(Error::InvalidInput(format!(
            "integrate needs dt > 0 and steps >= 1, got dt={dt}, steps={steps}"
        )));
    }
    spec.validate(x0.nrows(), x0.ncols())?;
    let field = |y: &DMatrix<f64>| eval_field(spec, y);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    for step in 1..=steps {
        let next = rk4_step(&field, states.last().unwrap(), dt)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step });
        }
        states.push(next);
    }
    let mut traj = Trajectory::new(states, dt)?;
    traj.spec = Some(spec.clone());
    Ok(traj)
}

/// Right-hand side of the eigenvalue flow `lambda' = 2 sum_k alpha_k lambda^{k+1}`.
pub fn eigenvalue_rate(alpha: &[f64], lambda: f64) -> f64 {
    let mut acc = 0.0;
    let mut pow = lambda;
    for &a in alpha {
        acc += a * pow;
        pow *= lambda;
    }
    2.0 * acc
}

/// Integrate each eigenvalue under the scalar flow with RK4. Output is
/// indexed `[eigenvalue][step]` with `steps + 1` samples each.
pub fn eigenvalue_flow(alpha: &[f64], lambda0: &[f64], steps: usize, dt: f64) -> Result<Vec<Vec<f64>>> {
    if lambda0.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidInput("eigenvalue flow needs positive initial eigenvalues".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let f = |l: f64| eigenvalue_rate(alpha, l);
    let mut out = Vec::with_capacity(lambda0.len());
    for &l0 in lambda0 {
        let mut path = Vec::with_capacity(steps + 1);
        let mut l = l0;
        path.push(l);
        for step in 1..=steps {
            let k1 = f(l);
            let k2 = f(l + 0.5 * dt * k1);
            let k3 = f(l + 0.5 * dt * k2);
            let k4 = f(l + dt * k3);
            l += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !l.is_finite() {
                return Err(Error::NonFiniteState { step });
            }
            path.push(l);
        }
        out.push(path);
    }
    Ok(out)
}
