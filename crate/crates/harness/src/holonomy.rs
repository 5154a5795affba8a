//! Polynomial versus Laplacian dynamics from matched initial conditions:
//! projected commutators of the generators over pairs of times, curvature
//! of the horizontal distribution, polynomial eigenvector drift, `Psi` along the
//! Laplacian flow, and the finite-time rank of the commutator span.

use std::time::Instant;

use nalgebra::{dmatrix, DMatrix};
use rdpg_core::dynamics::{integrate, DynamicsSpec, Trajectory};
use rdpg_core::geometry::{
    curvature_norm, eigenvector_stationarity, finite_time_rank, laplacian, laplacian_psi, polynomial_generator,
    projected_commutator,
};
use rdpg_core::model::{probability_matrix, spectral_decompose, SpectralDecomp, DEFAULT_GAP_TOL};
use rdpg_core::random::{derive_seed, rng_from_seed, uniform_positive_ball};
use rdpg_core::Error as CoreError;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{in_rep, HarnessError, Result};
use crate::output::{fmt_f64, RunOutput, RunRecord, SeedEntry, Table};
use crate::{run_reps, stream_seed, streams};

pub const WITNESS_PSI_12: f64 = 2.0 / 2187.0;

/// The three-node configuration whose `Psi_12` is `2 / 3^7`.
pub fn witness_configuration() -> DMatrix<f64> {
    dmatrix![1.0, 1.0; 2.0, 1.0; 2.0, 2.0] / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Polynomial,
    Laplacian,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Polynomial => "polynomial",
            Family::Laplacian => "laplacian",
        }
    }
}

/// Symmetric generator `M(X)` with `X' = M(X) X`.
pub fn generator(family: Family, x: &DMatrix<f64>, alpha: &[f64]) -> DMatrix<f64> {
    match family {
        Family::Polynomial => polynomial_generator(x, alpha),
        Family::Laplacian => -laplacian(x),
    }
}

/// Frame indices `0, s, 2s, ...` with about ten intervals.
pub fn time_grid(frames: usize) -> Vec<usize> {
    let stride = ((frames - 1) / 10).max(1);
    (0..frames).step_by(stride).collect()
}

#[derive(Debug, Clone)]
pub struct PairRow {
    pub family: Family,
    pub t1: f64,
    pub t2: f64,
    pub comm_norm: f64,
    pub curv_norm_sq: f64,
}

#[derive(Debug, Clone)]
pub struct RepResult {
    pub pairs: Vec<PairRow>,
    /// `(family, t, residual)`, polynomial family only.
    pub stationarity: Vec<(Family, f64, f64)>,
    /// `(t, |Psi|_F, Psi_12)` along the Laplacian trajectory.
    pub psi: Vec<(f64, f64, f64)>,
    /// `(d, rank, target)`.
    pub ranks: Vec<(usize, usize, usize)>,
}

fn decomp(x: &DMatrix<f64>, d: usize) -> std::result::Result<SpectralDecomp, CoreError> {
    spectral_decompose(&probability_matrix(x), d, DEFAULT_GAP_TOL)
}

fn family_rows(
    family: Family,
    traj: &Trajectory,
    alpha: &[f64],
    grid: &[usize],
    out: &mut RepResult,
) -> std::result::Result<(), CoreError> {
    let d = traj.states[0].ncols();
    let gens: Vec<DMatrix<f64>> = grid.iter().map(|&k| generator(family, &traj.states[k], alpha)).collect();
    for (a, &k1) in grid.iter().enumerate() {
        for (b, &k2) in grid.iter().enumerate().skip(a + 1) {
            let x = &traj.states[k1];
            let comm = projected_commutator(x, &gens[a], &gens[b])?.norm();
            let curv = curvature_norm(x, &gens[a], &gens[b])?.vertical_bracket_norm_sq;
            out.pairs.push(PairRow {
                family,
                t1: traj.times[k1],
                t2: traj.times[k2],
                comm_norm: comm,
                curv_norm_sq: curv,
            });
        }
    }
    if family != Family::Polynomial {
        // The Laplacian flow contracts towards consensus, so lambda_d
        // eventually leaves the resolvable range; its eigenvectors are not
        // expected to be stationary anyway.
        return Ok(());
    }
    let first = decomp(&traj.states[0], d)?;
    for &k in grid {
        let residual = eigenvector_stationarity(&first, &decomp(&traj.states[k], d)?)?;
        out.stationarity.push((family, traj.times[k], residual));
    }
    Ok(())
}

pub fn run_rep(cfg: &ExperimentConfig, rep: usize) -> std::result::Result<RepResult, CoreError> {
    let alpha = match &cfg.dynamics.family {
        rdpg_core::dynamics::DynamicsFamily::Polynomial { coefficients } => coefficients.clone(),
        _ => return Err(CoreError::InvalidInput("holonomy suite needs polynomial dynamics".into())),
    };
    let steps = cfg.t - 1;
    let grid = time_grid(cfg.t);
    let mut rng = rng_from_seed(stream_seed(cfg.master_seed, streams::INIT, rep));
    let x0 = uniform_positive_ball(&mut rng, cfg.n, cfg.d);
    let poly = integrate(&DynamicsSpec::polynomial(alpha.clone()), &x0, steps, cfg.dt)?;
    let lap = integrate(&DynamicsSpec::laplacian(), &x0, steps, cfg.dt)?;
    let mut out = RepResult {
        pairs: Vec::new(),
        stationarity: Vec::new(),
        psi: Vec::new(),
        ranks: Vec::new(),
    };
    family_rows(Family::Polynomial, &poly, &alpha, &grid, &mut out)?;
    family_rows(Family::Laplacian, &lap, &alpha, &grid, &mut out)?;
    for &k in &grid {
        let psi = laplacian_psi(&lap.states[k])?;
        let entry = if cfg.d >= 2 { psi[(0, 1)] } else { 0.0 };
        out.psi.push((lap.times[k], psi.norm(), entry));
    }
    for d in cfg.sweep_counts("ftr_d").map_err(|e| CoreError::InvalidInput(e.to_string()))?.unwrap_or_default() {
        let mut rng = rng_from_seed(derive_seed(cfg.master_seed, &[streams::INIT, rep as u64, d as u64]));
        let x0 = uniform_positive_ball(&mut rng, cfg.n, d);
        let traj = integrate(&DynamicsSpec::laplacian(), &x0, steps, cfg.dt)?;
        let samples: Vec<usize> = grid.iter().copied().filter(|&k| k > 0).collect();
        let ftr = finite_time_rank(&traj, 0, &samples)?;
        out.ranks.push((d, ftr.rank, d * (d - 1) / 2));
    }
    Ok(out)
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let start = Instant::now();
    if cfg.experiment != ExperimentKind::HolonomySuite {
        return Err(HarnessError::Config(format!("holonomy cannot run a {} config", cfg.experiment)));
    }
    cfg.validate()?;
    if cfg.t < 2 {
        return Err(HarnessError::Config("holonomy needs at least 2 frames".into()));
    }
    if let Some(ds) = cfg.sweep_counts("ftr_d")? {
        if let Some(&bad) = ds.iter().find(|&&d| d < 2 || d >= cfg.n) {
            return Err(HarnessError::Config(format!("ftr_d value {bad} must lie in [2, n)")));
        }
    }
    let results = run_reps(cfg.workers, cfg.reps, |rep| run_rep(cfg, rep).map_err(in_rep(rep)))?;

    let mut holonomy = Table::new("holonomy", &["family", "rep", "t1", "t2", "comm_norm", "curv_norm_sq"]);
    let mut stationarity = Table::new("stationarity", &["family", "rep", "t", "residual"]);
    let mut psi = Table::new("psi", &["rep", "t", "psi_norm", "psi_12"]);
    let mut ranks = Table::new("finite_time_rank", &["d", "rep", "rank", "target", "spans_full"]);
    for (rep, r) in results.iter().enumerate() {
        for p in &r.pairs {
            holonomy.push(vec![
                p.family.as_str().into(),
                rep.to_string(),
                fmt_f64(p.t1),
                fmt_f64(p.t2),
                fmt_f64(p.comm_norm),
                fmt_f64(p.curv_norm_sq),
            ]);
        }
        for (family, t, res) in &r.stationarity {
            stationarity.push(vec![family.as_str().into(), rep.to_string(), fmt_f64(*t), fmt_f64(*res)]);
        }
        for (t, norm, entry) in &r.psi {
            psi.push(vec![rep.to_string(), fmt_f64(*t), fmt_f64(*norm), fmt_f64(*entry)]);
        }
    }
    for (rep, r) in results.iter().enumerate() {
        for &(d, rank, target) in &r.ranks {
            ranks.push(vec![
                d.to_string(),
                rep.to_string(),
                rank.to_string(),
                target.to_string(),
                (rank == target).to_string(),
            ]);
        }
    }
    ranks.rows.sort_by_key(|row| (row[0].parse::<usize>().unwrap_or(0), row[1].parse::<usize>().unwrap_or(0)));

    let witness_value = laplacian_psi(&witness_configuration())?[(0, 1)];
    let mut witness = Table::new("psi_witness", &["entry", "value", "expected", "abs_err"]);
    witness.push(vec![
        "psi_12".into(),
        fmt_f64(witness_value),
        fmt_f64(WITNESS_PSI_12),
        fmt_f64((witness_value - WITNESS_PSI_12).abs()),
    ]);

    let mut record = RunRecord::new(cfg);
    record.seeds = (0..cfg.reps)
        .map(|rep| SeedEntry {
            label: "init".into(),
            rep,
            seed: stream_seed(cfg.master_seed, streams::INIT, rep),
        })
        .collect();
    let max_comm = |r: &RepResult, f: Family| {
        r.pairs.iter().filter(|p| p.family == f).map(|p| p.comm_norm).fold(0.0, f64::max)
    };
    record.per_rep = results
        .iter()
        .map(|r| {
            json!({
                "polynomial_max_comm": max_comm(r, Family::Polynomial),
                "laplacian_max_comm": max_comm(r, Family::Laplacian),
                "ranks": r.ranks.iter().map(|&(d, rank, _)| json!({"d": d, "rank": rank})).collect::<Vec<_>>(),
            })
        })
        .collect();
    let separated = results
        .iter()
        .filter(|r| max_comm(r, Family::Laplacian) > 1e4 * max_comm(r, Family::Polynomial))
        .count();
    record.summary = json!({
        "witness_psi_12": witness_value,
        "witness_abs_err": (witness_value - WITNESS_PSI_12).abs(),
        "polynomial_max_comm": results.iter().map(|r| max_comm(r, Family::Polynomial)).fold(0.0, f64::max),
        "seeds_laplacian_exceeds_1e4x_polynomial": separated,
        "reps": cfg.reps,
    });
    Ok(RunOutput {
        record,
        tables: vec![holonomy, stationarity, psi, ranks, witness],
    }
    .finish(start.elapsed()))
}
