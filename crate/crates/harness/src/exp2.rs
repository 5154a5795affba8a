//! Vector-field recovery under community spiral dynamics.
//!
//! Anchors sit in three communities around fixed centroids and never move;
//! the remaining nodes spiral around their community centroid. The field is
//! written in centroid offsets, which are coordinates of a particular gauge,
//! so a per-frame gauge error feeds straight into the regression.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rdpg_core::alignment::{align_anchor, align_none, align_sequential, global_gauge, AlignMethod};
use rdpg_core::dynamics::{integrate, spiral_velocity, DynamicsFamily, DynamicsSpec, Trajectory};
use rdpg_core::inference::{finite_difference_velocities, fit_field_regression, FieldFit};
use rdpg_core::observation::{exact_embeddings, inject_gauge_jitter, observe_trajectory, EmbeddingSeries};
use rdpg_core::random::rng_from_seed;
use rdpg_core::Error as CoreError;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{in_rep, HarnessError, Result};
use crate::output::{fmt_f64, RunOutput, RunRecord, SeedEntry, Table};
use crate::stats;
use crate::{observation_master, run_reps, stream_seed, streams};

pub const CONDITIONS: [&str; 4] = ["anchor", "sequential", "unaligned", "anchor_noiseless"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpiralParams {
    pub gamma: f64,
    pub beta: f64,
    pub omega: f64,
}

impl SpiralParams {
    pub fn velocity(&self, delta: &DVector<f64>) -> DVector<f64> {
        spiral_velocity(delta, self.gamma, self.beta, self.omega)
    }

    /// The field with its linear damping term removed.
    pub fn residual(&self, delta: &DVector<f64>) -> DVector<f64> {
        self.velocity(delta) + delta * self.gamma
    }
}

/// Initial configuration, community labels and the dynamics for one rep.
#[derive(Debug, Clone)]
pub struct Community {
    pub x0: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub anchors: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub spec: DynamicsSpec,
    pub params: SpiralParams,
}

fn spiral_parts(cfg: &ExperimentConfig) -> std::result::Result<(SpiralParams, Vec<Vec<f64>>), CoreError> {
    match &cfg.dynamics.family {
        DynamicsFamily::DampedSpiral {
            gamma,
            beta,
            omega,
            centroids,
            ..
        } => Ok((
            SpiralParams {
                gamma: *gamma,
                beta: *beta,
                omega: *omega,
            },
            centroids.clone(),
        )),
        _ => Err(CoreError::InvalidInput("exp2 needs damped_spiral dynamics".into())),
    }
}

/// Anchors are nodes `0..n_a`, moving nodes `n_a..n`; node `i` of either
/// group belongs to community `i mod K`. Anchor noise is re-centred so each
/// community's anchors average exactly to its centroid. Moving nodes start
/// at a random direction from their centroid, at a distance drawn uniformly
/// from `[offset_radius / 2, offset_radius]`.
pub fn build_community(cfg: &ExperimentConfig, rep: usize) -> std::result::Result<Community, CoreError> {
    let (params, centroids) = spiral_parts(cfg)?;
    let k = centroids.len();
    if k == 0 || centroids.iter().any(|c| c.len() != 3) {
        return Err(CoreError::InvalidInput("exp2 needs at least one three-dimensional centroid".into()));
    }
    let (n, n_a) = (cfg.n, cfg.n_a);
    if (0..k).any(|c| (0..n_a).filter(|i| i % k == c).count() == 0) {
        return Err(CoreError::InvalidInput(format!("n_a = {n_a} leaves a community without anchors")));
    }
    let mut rng = rng_from_seed(stream_seed(cfg.master_seed, streams::INIT, rep));
    let mut x0 = DMatrix::zeros(n, 3);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n_a {
        let c = i % k;
        labels.push(c);
        for j in 0..3 {
            x0[(i, j)] = centroids[c][j] + cfg.community_noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for c in 0..k {
        let members: Vec<usize> = (0..n_a).filter(|i| i % k == c).collect();
        for j in 0..3 {
            let shift = members.iter().map(|&i| x0[(i, j)]).sum::<f64>() / members.len() as f64 - centroids[c][j];
            for &i in &members {
                x0[(i, j)] -= shift;
            }
        }
    }
    for i in n_a..n {
        let c = (i - n_a) % k;
        labels.push(c);
        let mut dir = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        while dir.norm() < 1e-12 {
            dir = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        }
        let radius = cfg.offset_radius * rng.random_range(0.5..=1.0);
        let offset = dir.normalize() * radius;
        for j in 0..3 {
            x0[(i, j)] = centroids[c][j] + offset[j];
        }
    }
    let anchors: Vec<usize> = (0..n_a).collect();
    let spec = DynamicsSpec::new(DynamicsFamily::DampedSpiral {
        gamma: params.gamma,
        beta: params.beta,
        omega: params.omega,
        centroids: centroids.clone(),
        assignments: labels.clone(),
    })
    .with_anchors(anchors.clone(), 0.0);
    Ok(Community {
        x0,
        labels,
        anchors,
        centroids,
        spec,
        params,
    })
}

/// Rotate `aligned` by the single best gauge onto the true frames.
pub fn to_truth_gauge(aligned: &EmbeddingSeries, truth: &[DMatrix<f64>]) -> std::result::Result<Vec<DMatrix<f64>>, CoreError> {
    let q = global_gauge(aligned, truth)?;
    Ok(aligned.embeddings.iter().map(|x| x * q.transpose()).collect())
}

/// Regression samples `(x_i - mu_hat_k, x_i')` for moving nodes. Centroids
/// are the community means of the anchor rows averaged over all frames.
pub fn offset_samples(
    frames: &[DMatrix<f64>],
    community: &Community,
    dt: f64,
    order: usize,
) -> std::result::Result<Vec<(DVector<f64>, DVector<f64>)>, CoreError> {
    let k = community.centroids.len();
    let mut mu_hat = vec![DVector::zeros(3); k];
    let mut counts = vec![0usize; k];
    for frame in frames {
        for &i in &community.anchors {
            let c = community.labels[i];
            mu_hat[c] += frame.row(i).transpose();
            counts[c] += 1;
        }
    }
    for (m, &cnt) in mu_hat.iter_mut().zip(&counts) {
        *m /= cnt as f64;
    }
    let is_anchor = {
        let mut v = vec![false; frames[0].nrows()];
        for &i in &community.anchors {
            v[i] = true;
        }
        v
    };
    let mut samples = Vec::new();
    for (t, vel) in finite_difference_velocities(frames, dt, order)? {
        for i in (0..frames[t].nrows()).filter(|&i| !is_anchor[i]) {
            let delta = frames[t].row(i).transpose() - &mu_hat[community.labels[i]];
            samples.push((delta, vel.row(i).transpose()));
        }
    }
    Ok(samples)
}

/// Uniform test offsets in `[-w, w]^3`.
pub fn test_cloud(cfg: &ExperimentConfig, rep: usize) -> Vec<DVector<f64>> {
    let mut rng = rng_from_seed(stream_seed(cfg.master_seed, streams::TEST_CLOUD, rep));
    let w = cfg.test_half_width;
    (0..cfg.test_points)
        .map(|_| DVector::from_fn(3, |_, _| if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub mse_total: f64,
    pub mse_residual: f64,
    pub gamma_hat: f64,
}

pub fn score(fit: &FieldFit, params: &SpiralParams, cloud: &[DVector<f64>]) -> Score {
    let gamma_hat = fit.damping_estimate();
    let mse_total = fit.mse(cloud, |d| params.velocity(d));
    let residual: f64 = cloud
        .iter()
        .map(|d| (fit.predict(d) + d * gamma_hat - params.residual(d)).norm_squared())
        .sum::<f64>()
        / cloud.len().max(1) as f64;
    Score {
        mse_total,
        mse_residual: residual,
        gamma_hat,
    }
}

fn fit_and_score(
    cfg: &ExperimentConfig,
    frames: &[DMatrix<f64>],
    community: &Community,
    order: usize,
    cloud: &[DVector<f64>],
) -> std::result::Result<Score, CoreError> {
    let samples = offset_samples(frames, community, cfg.dt, order)?;
    let fit = fit_field_regression(&samples, cfg.fit_degree, cfg.ridge)?;
    Ok(score(&fit, &community.params, cloud))
}

/// Scores for every entry of [`CONDITIONS`], in order.
pub fn run_rep(cfg: &ExperimentConfig, rep: usize) -> std::result::Result<Vec<Score>, CoreError> {
    let community = build_community(cfg, rep)?;
    let traj: Trajectory = integrate(&community.spec, &community.x0, cfg.t - 1, cfg.dt)?;
    let cloud = test_cloud(cfg, rep);
    let observed = observe_trajectory(&traj, 3, cfg.m, observation_master(cfg.master_seed), rep as u64)?;
    let series = inject_gauge_jitter(&observed, stream_seed(cfg.master_seed, streams::JITTER, rep));

    let mut scores = Vec::with_capacity(CONDITIONS.len());
    for method in [AlignMethod::Anchor, AlignMethod::Sequential, AlignMethod::None] {
        let report = match method {
            AlignMethod::Anchor => align_anchor(&series, &community.anchors, 0)?,
            AlignMethod::Sequential => align_sequential(&series)?,
            AlignMethod::None => align_none(&series),
        };
        let frames = to_truth_gauge(&report.apply(&series)?, &traj.states)?;
        scores.push(fit_and_score(cfg, &frames, &community, 2, &cloud)?);
    }

    let exact = exact_embeddings(&traj, 3)?;
    let aligned = align_anchor(&exact, &community.anchors, 0)?.apply(&exact)?;
    let frames = to_truth_gauge(&aligned, &traj.states)?;
    scores.push(fit_and_score(cfg, &frames, &community, 4, &cloud)?);
    Ok(scores)
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let start = Instant::now();
    if cfg.experiment != ExperimentKind::Exp2Pipeline {
        return Err(HarnessError::Config(format!("exp2 cannot run a {} config", cfg.experiment)));
    }
    cfg.validate()?;
    let results = run_reps(cfg.workers, cfg.reps, |rep| run_rep(cfg, rep).map_err(in_rep(rep)))?;

    let mut table = Table::new("mse_by_condition", &["condition", "rep", "mse_total", "mse_residual"]);
    let mut damping = Table::new("damping_by_condition", &["condition", "rep", "gamma_hat"]);
    for (c, name) in CONDITIONS.iter().enumerate() {
        for (rep, scores) in results.iter().enumerate() {
            let s = scores[c];
            table.push(vec![
                name.to_string(),
                rep.to_string(),
                fmt_f64(s.mse_total),
                fmt_f64(s.mse_residual),
            ]);
            damping.push(vec![name.to_string(), rep.to_string(), fmt_f64(s.gamma_hat)]);
        }
    }

    let mut record = RunRecord::new(cfg);
    for rep in 0..cfg.reps {
        for (label, stream) in [
            ("init", streams::INIT),
            ("jitter", streams::JITTER),
            ("test_cloud", streams::TEST_CLOUD),
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
        .map(|scores| {
            let mut m = serde_json::Map::new();
            for (name, s) in CONDITIONS.iter().zip(scores) {
                m.insert(
                    name.to_string(),
                    json!({"mse_total": s.mse_total, "mse_residual": s.mse_residual, "gamma_hat": s.gamma_hat}),
                );
            }
            Value::Object(m)
        })
        .collect();
    let mut summary = serde_json::Map::new();
    for (c, name) in CONDITIONS.iter().enumerate() {
        let total: Vec<f64> = results.iter().map(|s| s[c].mse_total).collect();
        let residual: Vec<f64> = results.iter().map(|s| s[c].mse_residual).collect();
        summary.insert(
            name.to_string(),
            json!({
                "mse_total_mean": stats::mean(&total),
                "mse_total_sd": stats::sd(&total),
                "mse_residual_mean": stats::mean(&residual),
                "mse_residual_sd": stats::sd(&residual),
            }),
        );
    }
    record.summary = Value::Object(summary);
    Ok(RunOutput {
        record,
        tables: vec![table, damping],
    }
    .finish(start.elapsed()))
}
