//! Experiment configuration.
//!
//! A config file is a JSON object whose keys are a subset of
//! [`ExperimentConfig`]'s fields; missing keys take the defaults of the
//! experiment kind, and command-line flags are applied last. A `"quick":
//! true` key records that the sizes in the file are already halved (as in
//! the snapshot of a `--quick` run); `--quick` on the command line requests
//! the halving.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rdpg_core::dynamics::{DynamicsFamily, DynamicsSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Exp1Anchor,
    Exp2Pipeline,
    HolonomySuite,
    FisherSuite,
    Custom,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Exp1Anchor => "exp1_anchor",
            ExperimentKind::Exp2Pipeline => "exp2_pipeline",
            ExperimentKind::HolonomySuite => "holonomy_suite",
            ExperimentKind::FisherSuite => "fisher_suite",
            ExperimentKind::Custom => "custom",
        }
    }

    fn sweep_names(&self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Exp1Anchor => &["n_a", "T", "drift", "scale", "T_long"],
            ExperimentKind::HolonomySuite => &["ftr_d"],
            ExperimentKind::FisherSuite => &["T", "n", "delta"],
            ExperimentKind::Exp2Pipeline | ExperimentKind::Custom => &[],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub name: String,
    pub values: Vec<f64>,
}

impl Sweep {
    pub fn new(name: &str, values: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            values: values.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub d: usize,
    /// Number of observed frames.
    #[serde(rename = "T")]
    pub t: usize,
    pub dt: f64,
    /// Adjacency samples per frame.
    pub m: usize,
    pub n_a: usize,
    pub reps: usize,
    pub master_seed: u64,
    pub dynamics: DynamicsSpec,
    #[serde(default)]
    pub sweep: Vec<Sweep>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub quick: bool,
    /// Multiplier on the initial latent positions.
    pub scale: f64,
    /// Rate multiplier on anchor rows (0 freezes them).
    pub anchor_drift: f64,
    /// Standard deviation of anchor positions around their community centroid.
    pub community_noise: f64,
    /// Largest initial distance of a moving node from its centroid.
    pub offset_radius: f64,
    pub fit_degree: usize,
    pub ridge: f64,
    pub test_points: usize,
    pub test_half_width: f64,
}

pub const SPIRAL_CENTROIDS: [[f64; 3]; 3] = [[0.7, 0.2, 0.2], [0.2, 0.7, 0.2], [0.2, 0.2, 0.7]];

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            n: 200,
            d: 2,
            t: 50,
            dt: 0.05,
            m: 3,
            n_a: 15,
            reps: 20,
            master_seed: 20240917,
            dynamics: DynamicsSpec::polynomial(vec![-0.3, 0.003]),
            sweep: Vec::new(),
            output_dir: None,
            workers: None,
            quick: false,
            scale: 1.0,
            anchor_drift: 0.0,
            community_noise: 0.05,
            offset_radius: 0.2,
            fit_degree: 1,
            ridge: rdpg_core::inference::DEFAULT_RIDGE,
            test_points: 2000,
            test_half_width: 0.3,
        };
        match kind {
            ExperimentKind::Exp1Anchor => Self {
                sweep: vec![
                    Sweep::new("n_a", &[0.0, 1.0, 2.0, 5.0, 10.0, 15.0]),
                    Sweep::new("T", &[25.0, 50.0, 100.0, 200.0]),
                    Sweep::new("drift", &[0.0, 0.01, 0.05, 0.1]),
                    Sweep::new("scale", &[0.6, 0.8, 1.0]),
                    Sweep::new("T_long", &[200.0]),
                ],
                ..base
            },
            ExperimentKind::Exp2Pipeline => Self {
                d: 3,
                n_a: 100,
                dt: 0.1,
                m: 10,
                reps: 5,
                fit_degree: 3,
                dynamics: DynamicsSpec::new(DynamicsFamily::DampedSpiral {
                    gamma: 0.3,
                    beta: -0.5,
                    omega: 1.0,
                    centroids: SPIRAL_CENTROIDS.iter().map(|c| c.to_vec()).collect(),
                    assignments: Vec::new(),
                }),
                ..base
            },
            ExperimentKind::HolonomySuite => Self {
                n: 10,
                t: 51,
                n_a: 0,
                m: 1,
                sweep: vec![Sweep::new("ftr_d", &[2.0, 3.0])],
                ..base
            },
            ExperimentKind::FisherSuite => Self {
                n: 50,
                t: 40,
                n_a: 0,
                m: 1,
                reps: 20,
                dynamics: DynamicsSpec::polynomial(vec![-0.01, 1e-5]),
                sweep: vec![
                    Sweep::new("T", &[10.0, 20.0, 40.0, 80.0, 160.0]),
                    Sweep::new("n", &[25.0, 50.0, 100.0, 200.0]),
                    Sweep::new("delta", &[0.25, 0.5, 1.0, 2.0, 4.0]),
                ],
                ..base
            },
            ExperimentKind::Custom => Self {
                n: 50,
                n_a: 0,
                reps: 1,
                ..base
            },
        }
    }

    /// Desk-scale variant: halves `n` (and the anchor count of the community
    /// experiment). Applying it twice has no further effect.
    pub fn with_quick(mut self) -> Self {
        if !self.quick {
            self.quick = true;
            if matches!(self.experiment, ExperimentKind::Exp1Anchor | ExperimentKind::Exp2Pipeline) {
                self.n /= 2;
                if self.experiment == ExperimentKind::Exp2Pipeline {
                    self.n_a /= 2;
                }
            }
        }
        self
    }

    /// Defaults of `kind` overlaid with the keys present in a JSON object.
    pub fn from_json(kind: ExperimentKind, text: &str) -> Result<Self> {
        let overrides: Value = serde_json::from_str(text)?;
        let Value::Object(overrides) = overrides else {
            return Err(HarnessError::Config("config file must hold a JSON object".into()));
        };
        if let Some(tag) = overrides.get("experiment") {
            let declared: ExperimentKind = serde_json::from_value(tag.clone())
                .map_err(|e| HarnessError::Config(format!("experiment tag: {e}")))?;
            if declared != kind {
                return Err(HarnessError::Config(format!(
                    "config declares experiment {declared} but {kind} was requested"
                )));
            }
        }
        let Value::Object(mut merged) = serde_json::to_value(Self::defaults(kind))? else {
            unreachable!("config serializes to an object")
        };
        merged.extend(overrides);
        serde_json::from_value(Value::Object(merged)).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(kind: ExperimentKind, path: &Path) -> Result<Self> {
        Self::from_json(kind, &fs::read_to_string(path)?)
    }

    pub fn sweep_values(&self, name: &str) -> Option<&[f64]> {
        self.sweep.iter().find(|s| s.name == name).map(|s| s.values.as_slice())
    }

    /// Sweep values that must be non-negative integers.
    pub fn sweep_counts(&self, name: &str) -> Result<Option<Vec<usize>>> {
        self.sweep_values(name)
            .map(|vals| {
                vals.iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                            Ok(v as usize)
                        } else {
                            Err(HarnessError::Config(format!("sweep {name}: {v} is not a count")))
                        }
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn polynomial_coefficients(&self) -> Result<&[f64]> {
        match &self.dynamics.family {
            DynamicsFamily::Polynomial { coefficients } if !coefficients.is_empty() => Ok(coefficients),
            _ => Err(HarnessError::Config(format!(
                "{} needs polynomial dynamics with at least one coefficient",
                self.experiment
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        for (name, v) in [("n", self.n), ("d", self.d), ("T", self.t), ("m", self.m)] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d >= self.n {
            return bad(format!("d = {} must be smaller than n = {}", self.d, self.n));
        }
        if self.n_a > self.n {
            return bad(format!("n_a = {} exceeds n = {}", self.n_a, self.n));
        }
        for (name, v) in [("dt", self.dt), ("scale", self.scale), ("ridge", self.ridge)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("anchor_drift", self.anchor_drift),
            ("community_noise", self.community_noise),
            ("offset_radius", self.offset_radius),
            ("test_half_width", self.test_half_width),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative and finite, got {v}"));
            }
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        let allowed = self.experiment.sweep_names();
        for s in &self.sweep {
            if s.values.is_empty() {
                return bad(format!("sweep {} has no values", s.name));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return bad(format!("sweep {} has a non-finite value", s.name));
            }
            if !allowed.contains(&s.name.as_str()) {
                return bad(format!("{} has no sweep named {:?} (expected one of {allowed:?})", self.experiment, s.name));
            }
        }
        for name in ["n_a", "T", "T_long", "n", "ftr_d"] {
            self.sweep_counts(name)?;
        }
        match self.experiment {
            ExperimentKind::Exp1Anchor => {
                self.polynomial_coefficients()?;
                if self.t < 3 {
                    return bad("exp1 needs at least 3 frames".into());
                }
            }
            ExperimentKind::Exp2Pipeline => {
                if self.d != 3 {
                    return bad(format!("exp2 is three-dimensional, got d = {}", self.d));
                }
                if !matches!(self.dynamics.family, DynamicsFamily::DampedSpiral { .. }) {
                    return bad("exp2 needs damped_spiral dynamics".into());
                }
                if self.n_a < 3 || self.n_a >= self.n {
                    return bad(format!("exp2 needs 3 <= n_a < n, got n_a = {}", self.n_a));
                }
                if self.t < 5 || self.test_points == 0 {
                    return bad("exp2 needs at least 5 frames and one test point".into());
                }
            }
            ExperimentKind::HolonomySuite | ExperimentKind::FisherSuite => {
                self.polynomial_coefficients()?;
            }
            ExperimentKind::Custom => {}
        }
        Ok(())
    }
}
