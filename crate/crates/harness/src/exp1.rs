//! Anchor-based alignment under polynomial dynamics with frozen anchors.
//!
//! Every rep draws one initial configuration and one anchor ordering; each
//! sweep condition then re-integrates from that configuration (scaled), uses
//! the first `n_a` nodes of the ordering as anchors, observes `m` averaged
//! graphs per frame, scrambles each frame by a random orthogonal gauge, and
//! scores the three alignment methods against the true trajectory.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rdpg_core::alignment::{align_anchor, align_none, align_sequential, trajectory_error, AlignMethod};
use rdpg_core::dynamics::{integrate, DynamicsSpec, Trajectory};
use rdpg_core::inference::{fit_polynomial_coeffs, PolynomialFit};
use rdpg_core::observation::{inject_gauge_jitter, observe_trajectory, EmbeddingSeries};
use rdpg_core::random::{rng_from_seed, uniform_positive_ball};
use rdpg_core::Error as CoreError;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{in_rep, HarnessError, Result};
use crate::output::{fmt_f64, RunOutput, RunRecord, SeedEntry, Table};
use crate::stats;
use crate::{observation_master, run_reps, stream_seed, streams};

pub const METHODS: [AlignMethod; 3] = [AlignMethod::Anchor, AlignMethod::Sequential, AlignMethod::None];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub n_a: usize,
    pub frames: usize,
    pub drift: f64,
    pub scale: f64,
}

impl Condition {
    fn key(&self) -> (usize, usize, u64, u64) {
        (self.n_a, self.frames, self.drift.to_bits(), self.scale.to_bits())
    }
}

#[derive(Debug, Clone)]
pub enum MethodOutcome {
    Errors(Vec<f64>),
    AnchorRankDeficient { anchors: usize, ratio: f64 },
}

impl MethodOutcome {
    pub fn status(&self) -> &'static str {
        match self {
            MethodOutcome::Errors(_) => "ok",
            MethodOutcome::AnchorRankDeficient { .. } => "anchor_rank_deficient",
        }
    }

    pub fn errors(&self) -> Option<&[f64]> {
        match self {
            MethodOutcome::Errors(e) => Some(e),
            MethodOutcome::AnchorRankDeficient { .. } => None,
        }
    }

    fn mean_err(&self) -> f64 {
        self.errors().map_or(f64::NAN, stats::mean)
    }

    fn terminal_err(&self) -> f64 {
        self.errors().and_then(|e| e.last().copied()).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone)]
pub struct ConditionResult {
    pub condition: Condition,
    pub times: Vec<f64>,
    /// In the order of [`METHODS`].
    pub outcomes: Vec<MethodOutcome>,
    pub alpha: PolynomialFit,
}

/// One pipeline pass for `rep` under `cond`.
pub fn run_condition(cfg: &ExperimentConfig, cond: Condition, rep: usize) -> std::result::Result<ConditionResult, CoreError> {
    let coefficients = match &cfg.dynamics.family {
        rdpg_core::dynamics::DynamicsFamily::Polynomial { coefficients } => coefficients.clone(),
        _ => return Err(CoreError::InvalidInput("exp1 needs polynomial dynamics".into())),
    };
    let mut rng = rng_from_seed(stream_seed(cfg.master_seed, streams::INIT, rep));
    let x0 = uniform_positive_ball(&mut rng, cfg.n, cfg.d) * cond.scale;
    let anchors = anchor_order(cfg, rep)[..cond.n_a].to_vec();
    let mut spec = DynamicsSpec::polynomial(coefficients.clone());
    if !anchors.is_empty() {
        spec = spec.with_anchors(anchors.clone(), cond.drift);
    }
    let traj = integrate(&spec, &x0, cond.frames - 1, cfg.dt)?;
    let observed = observe_trajectory(&traj, cfg.d, cfg.m, observation_master(cfg.master_seed), rep as u64)?;
    let series = inject_gauge_jitter(&observed, stream_seed(cfg.master_seed, streams::JITTER, rep));

    let mut outcomes = Vec::with_capacity(METHODS.len());
    for method in METHODS {
        let report = match method {
            AlignMethod::Anchor => match align_anchor(&series, &anchors, 0) {
                Ok(r) => r,
                Err(CoreError::AnchorRankDeficient { anchors, ratio }) => {
                    outcomes.push(MethodOutcome::AnchorRankDeficient { anchors, ratio });
                    continue;
                }
                Err(e) => return Err(e),
            },
            AlignMethod::Sequential => align_sequential(&series)?,
            AlignMethod::None => align_none(&series),
        };
        let aligned = report.apply(&series)?;
        outcomes.push(MethodOutcome::Errors(trajectory_error(&aligned, &traj.states)?));
    }
    let alpha = fit_polynomial_coeffs(&estimated_p(&series, cfg.dt)?, coefficients.len() - 1)?;
    Ok(ConditionResult {
        condition: cond,
        times: traj.times.clone(),
        outcomes,
        alpha,
    })
}

/// Random ordering of the nodes for `rep`; the first `n_a` are the anchors.
pub fn anchor_order(cfg: &ExperimentConfig, rep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cfg.n).collect();
    order.shuffle(&mut rng_from_seed(stream_seed(cfg.master_seed, streams::ANCHORS, rep)));
    order
}

/// `X_hat X_hat^T` of each frame, which no alignment can change.
fn estimated_p(series: &EmbeddingSeries, dt: f64) -> std::result::Result<Trajectory, CoreError> {
    let frames: Vec<DMatrix<f64>> = series.embeddings.iter().map(|x| x * x.transpose()).collect();
    Trajectory::new(frames, dt)
}

struct Plan {
    conditions: Vec<Condition>,
    index: BTreeMap<(usize, usize, u64, u64), usize>,
}

impl Plan {
    fn add(&mut self, c: Condition) -> usize {
        let next = self.conditions.len();
        let i = *self.index.entry(c.key()).or_insert(next);
        if i == next {
            self.conditions.push(c);
        }
        i
    }
}

fn sweep_or(cfg: &ExperimentConfig, name: &str, default: f64) -> Vec<f64> {
    cfg.sweep_values(name).map(<[f64]>::to_vec).unwrap_or_else(|| vec![default])
}

fn counts_or(cfg: &ExperimentConfig, name: &str, default: usize) -> Result<Vec<usize>> {
    Ok(cfg.sweep_counts(name)?.unwrap_or_else(|| vec![default]))
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let start = Instant::now();
    if cfg.experiment != ExperimentKind::Exp1Anchor {
        return Err(HarnessError::Config(format!("exp1 cannot run a {} config", cfg.experiment)));
    }
    cfg.validate()?;
    let base = Condition {
        n_a: cfg.n_a,
        frames: cfg.t,
        drift: cfg.anchor_drift,
        scale: cfg.scale,
    };
    let na_values = counts_or(cfg, "n_a", cfg.n_a)?;
    let t_values = counts_or(cfg, "T", cfg.t)?;
    let t_long = *counts_or(cfg, "T_long", cfg.t)?.iter().max().expect("non-empty sweep");
    let drift_values = sweep_or(cfg, "drift", cfg.anchor_drift);
    let scale_values = sweep_or(cfg, "scale", cfg.scale);
    if let Some(&bad) = na_values.iter().find(|&&v| v > cfg.n) {
        return Err(HarnessError::Config(format!("n_a sweep value {bad} exceeds n = {}", cfg.n)));
    }
    if let Some(&bad) = t_values.iter().chain([&t_long]).find(|&&v| v < 3) {
        return Err(HarnessError::Config(format!("T sweep value {bad} is below 3 frames")));
    }
    if let Some(&bad) = drift_values.iter().chain(&scale_values).find(|&&v| !(v >= 0.0)) {
        return Err(HarnessError::Config(format!("drift/scale sweep value {bad} is negative")));
    }

    let mut plan = Plan {
        conditions: Vec::new(),
        index: BTreeMap::new(),
    };
    let long_id = plan.add(Condition { frames: t_long, ..base });
    let na_ids: Vec<usize> = na_values.iter().map(|&n_a| plan.add(Condition { n_a, ..base })).collect();
    let t_ids: Vec<usize> = t_values.iter().map(|&frames| plan.add(Condition { frames, ..base })).collect();
    let drift_ids: Vec<usize> = drift_values.iter().map(|&drift| plan.add(Condition { drift, ..base })).collect();
    let scale_ids: Vec<usize> = scale_values.iter().map(|&scale| plan.add(Condition { scale, ..base })).collect();

    let results: Vec<Vec<ConditionResult>> = run_reps(cfg.workers, cfg.reps, |rep| {
        plan.conditions
            .iter()
            .map(|&c| run_condition(cfg, c, rep).map_err(in_rep(rep)))
            .collect()
    })?;

    let mut err_vs_t = Table::new("err_vs_t", &["t", "method", "rep", "err"]);
    for (rep, per_rep) in results.iter().enumerate() {
        let r = &per_rep[long_id];
        for (method, outcome) in METHODS.iter().zip(&r.outcomes) {
            if let Some(errs) = outcome.errors() {
                for (t, e) in r.times.iter().zip(errs) {
                    err_vs_t.push(vec![fmt_f64(*t), method.to_string(), rep.to_string(), fmt_f64(*e)]);
                }
            }
        }
    }

    let sweep_table = |name: &str, key: &str, ids: &[usize], labels: Vec<String>| {
        let mut table = Table::new(name, &[key, "method", "rep", "status", "mean_err", "terminal_err"]);
        for (&id, label) in ids.iter().zip(&labels) {
            for (rep, per_rep) in results.iter().enumerate() {
                for (method, outcome) in METHODS.iter().zip(&per_rep[id].outcomes) {
                    table.push(vec![
                        label.clone(),
                        method.to_string(),
                        rep.to_string(),
                        outcome.status().to_string(),
                        fmt_f64(outcome.mean_err()),
                        fmt_f64(outcome.terminal_err()),
                    ]);
                }
            }
        }
        table
    };
    let err_vs_na = sweep_table("err_vs_na", "n_a", &na_ids, na_values.iter().map(|v| v.to_string()).collect());
    let err_vs_t_sweep = sweep_table("err_vs_T", "T", &t_ids, t_values.iter().map(|v| v.to_string()).collect());
    let err_vs_drift = sweep_table("err_vs_drift", "drift", &drift_ids, drift_values.iter().map(|v| fmt_f64(*v)).collect());
    let err_vs_scale = sweep_table("err_vs_scale", "scale", &scale_ids, scale_values.iter().map(|v| fmt_f64(*v)).collect());

    let degree = cfg.polynomial_coefficients()?.len() - 1;
    let mut alpha_header = vec!["n_a".to_string(), "rep".to_string()];
    alpha_header.extend((0..=degree).map(|k| format!("alpha_{k}")));
    alpha_header.extend(["relative_residual".to_string(), "condition_number".to_string()]);
    let mut alpha_fit = Table {
        name: "alpha_fit".into(),
        header: alpha_header,
        rows: Vec::new(),
    };
    for (&id, n_a) in na_ids.iter().zip(&na_values) {
        for (rep, per_rep) in results.iter().enumerate() {
            let fit = &per_rep[id].alpha;
            let mut row = vec![n_a.to_string(), rep.to_string()];
            row.extend(fit.coefficients.iter().map(|c| fmt_f64(*c)));
            row.extend([fmt_f64(fit.relative_residual), fmt_f64(fit.condition_number)]);
            alpha_fit.push(row);
        }
    }

    let mut record = RunRecord::new(cfg);
    for rep in 0..cfg.reps {
        for (label, stream) in [
            ("init", streams::INIT),
            ("anchors", streams::ANCHORS),
            ("jitter", streams::JITTER),
        ] {
            record.seeds.push(SeedEntry {
                label: label.into(),
                rep,
                seed: stream_seed(cfg.master_seed, stream, rep),
            });
        }
    }
    record.seeds.push(SeedEntry {
        label: "observation_master".into(),
        rep: 0,
        seed: observation_master(cfg.master_seed),
    });
    record.per_rep = results
        .iter()
        .map(|per_rep| {
            let long = &per_rep[long_id];
            let mut m = serde_json::Map::new();
            for (method, outcome) in METHODS.iter().zip(&long.outcomes) {
                m.insert(format!("{method}_mean_err"), json!(outcome.mean_err()));
                m.insert(format!("{method}_terminal_err"), json!(outcome.terminal_err()));
            }
            Value::Object(m)
        })
        .collect();
    record.summary = summarize(&err_vs_t, &alpha_fit, t_long);

    Ok(RunOutput {
        record,
        tables: vec![err_vs_t, err_vs_na, err_vs_t_sweep, err_vs_drift, err_vs_scale, alpha_fit],
    }
    .finish(start.elapsed()))
}

/// Mean over reps of the per-time error of `method`, in time order.
pub fn mean_curve(err_vs_t: &Table, method: &str) -> (Vec<f64>, Vec<f64>) {
    let mut by_t: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for row in err_vs_t.filter("method", method) {
        let t = err_vs_t.get(row, "t");
        by_t.entry(t.to_bits()).or_insert((t, Vec::new())).1.push(err_vs_t.get(row, "err"));
    }
    let mut pts: Vec<(f64, f64)> = by_t.into_values().map(|(t, v)| (t, stats::mean(&v))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.into_iter().unzip()
}

fn summarize(err_vs_t: &Table, alpha_fit: &Table, t_long: usize) -> Value {
    let (times, anchor) = mean_curve(err_vs_t, "anchor");
    let (_, sequential) = mean_curve(err_vs_t, "sequential");
    let mut out = serde_json::Map::new();
    out.insert("T_long".into(), json!(t_long));
    if !anchor.is_empty() {
        let max = anchor.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = anchor.iter().copied().fold(f64::INFINITY, f64::min);
        out.insert("anchor_flatness".into(), json!(max / min));
        out.insert("anchor_mean_err".into(), json!(stats::mean(&anchor)));
    }
    if sequential.len() >= 3 {
        let s = stats::spearman(&times, &sequential);
        out.insert("sequential_spearman_rho".into(), json!(s.rho));
        out.insert("sequential_spearman_p".into(), json!(s.p_value));
    }
    if let (Some(a), Some(s)) = (anchor.last(), sequential.last()) {
        out.insert("terminal_ratio_sequential_over_anchor".into(), json!(s / a));
    }
    let mut alpha = serde_json::Map::new();
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in &alpha_fit.rows {
        groups.entry(alpha_fit.get(row, "n_a") as usize).or_default().push(alpha_fit.get(row, "alpha_0"));
    }
    for (n_a, vals) in groups {
        alpha.insert(n_a.to_string(), json!({"mean": stats::mean(&vals), "sd": stats::sd(&vals)}));
    }
    out.insert("alpha_0_by_n_a".into(), Value::Object(alpha));
    Value::Object(out)
}
