//! Fisher information of polynomial coefficients: scaling with the number
//! of snapshots, with `n`, and with the size of the smallest eigenvalue;
//! plus agreement of the linear (`K = 0`) case with its closed form.

use std::time::Instant;

use nalgebra::DMatrix;
use rdpg_core::inference::{fisher_polynomial, FisherReport, DEFAULT_PROB_FLOOR};
use rdpg_core::model::{probability_matrix, spectral_decompose, SpectralDecomp, DEFAULT_GAP_TOL};
use rdpg_core::random::{derive_seed, rng_from_seed, uniform_positive_ball};
use rdpg_core::Error as CoreError;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{in_rep, HarnessError, Result};
use crate::output::{fmt_f64, RunOutput, RunRecord, SeedEntry, Table};
use crate::stats;
use crate::{run_reps, stream_seed, streams};

/// `sum_{k=0..=T} 4 t_k^2 sum_{i<j} P_ij(t_k) / (1 - P_ij(t_k))` with
/// `P(t) = P(0) exp(2 alpha t)`.
pub fn linear_closed_form(p0: &DMatrix<f64>, alpha: f64, t_count: usize, dt: f64) -> f64 {
    let n = p0.nrows();
    let mut total = 0.0;
    for k in 0..=t_count {
        let t = k as f64 * dt;
        let growth = (2.0 * alpha * t).exp();
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let p = p0[(i, j)] * growth;
                s += p / (1.0 - p);
            }
        }
        total += 4.0 * t * t * s;
    }
    total
}

fn random_decomp(n: usize, d: usize, seed: u64) -> std::result::Result<SpectralDecomp, CoreError> {
    let x = uniform_positive_ball(&mut rng_from_seed(seed), n, d);
    spectral_decompose(&probability_matrix(&x), d, DEFAULT_GAP_TOL)
}

/// `P(0) = lambda_1 u_1 u_1^T + delta u_2 u_2^T` with `u_1 = 1/sqrt(n)` and
/// `u_2` alternating `+-1/sqrt(n)`; `lambda_1 = 0.3 n`, so entries are
/// `0.3 +- delta / n`.
pub fn two_block_decomp(n: usize, delta: f64) -> std::result::Result<SpectralDecomp, CoreError> {
    if n < 2 || n % 2 != 0 {
        return Err(CoreError::InvalidInput(format!("two-block configuration needs even n, got {n}")));
    }
    let s = 1.0 / (n as f64).sqrt();
    let u = DMatrix::from_fn(n, 2, |i, c| if c == 0 || i % 2 == 0 { s } else { -s });
    SpectralDecomp::from_parts(vec![0.3 * n as f64, delta], u)
}

fn upper_entries(info: &DMatrix<f64>) -> Vec<f64> {
    let k = info.nrows();
    let mut out = Vec::with_capacity(k * (k + 1) / 2);
    for a in 0..k {
        for b in a..k {
            out.push(info[(a, b)]);
        }
    }
    out
}

fn info_header(lead: &str, k: usize, tail: &[&str]) -> Vec<String> {
    let mut h = vec![lead.to_string()];
    for a in 0..k {
        for b in a..k {
            h.push(format!("I_{a}{b}"));
        }
    }
    h.push("crb_trace".into());
    h.extend(tail.iter().map(|s| s.to_string()));
    h
}

fn info_row(lead: String, report: &FisherReport, tail: &[f64]) -> Vec<String> {
    let mut row = vec![lead];
    row.extend(upper_entries(&report.info_matrix).into_iter().map(fmt_f64));
    row.push(fmt_f64(report.crb_trace));
    row.extend(tail.iter().map(|v| fmt_f64(*v)));
    row
}

fn rel_dev(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        (a - b).abs() / b.abs()
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let start = Instant::now();
    if cfg.experiment != ExperimentKind::FisherSuite {
        return Err(HarnessError::Config(format!("fishersuite cannot run a {} config", cfg.experiment)));
    }
    cfg.validate()?;
    let theta = cfg.polynomial_coefficients()?.to_vec();
    let k = theta.len();
    let alpha0 = theta[0];
    let t_values = cfg.sweep_counts("T")?.unwrap_or_else(|| vec![cfg.t]);
    let n_values = cfg.sweep_counts("n")?.unwrap_or_else(|| vec![cfg.n]);
    let delta_values = cfg.sweep_values("delta").map(<[f64]>::to_vec).unwrap_or_default();
    if let Some(&bad) = n_values.iter().find(|&&n| n <= cfg.d) {
        return Err(HarnessError::Config(format!("n sweep value {bad} must exceed d = {}", cfg.d)));
    }
    if let Some(&bad) = delta_values.iter().find(|&&v| !(v > 0.0 && v < 0.3 * cfg.n as f64)) {
        return Err(HarnessError::Config(format!("delta sweep value {bad} must lie in (0, 0.3 n)")));
    }
    let floor = DEFAULT_PROB_FLOOR;
    let base_seed = stream_seed(cfg.master_seed, streams::INIT, 0);
    let base = random_decomp(cfg.n, cfg.d, base_seed).map_err(in_rep(0))?;
    let p0 = base.reconstruct();

    let mut vs_t = Table {
        name: "fisher_vs_T".into(),
        header: info_header("T", k, &["linear_I", "closed_form", "rel_dev"]),
        rows: Vec::new(),
    };
    let mut t_points = Vec::new();
    for &t_count in &t_values {
        let full = fisher_polynomial(&base, &theta, t_count, cfg.dt, floor)?;
        let linear = fisher_polynomial(&base, &[alpha0], t_count, cfg.dt, floor)?;
        let ode = linear.info_matrix[(0, 0)];
        let closed = linear_closed_form(&p0, alpha0, t_count, cfg.dt);
        vs_t.push(info_row(t_count.to_string(), &full, &[ode, closed, rel_dev(ode, closed)]));
        t_points.push((t_count as f64, ode));
    }

    let mut vs_n = Table {
        name: "fisher_vs_n".into(),
        header: info_header("n", k, &[]),
        rows: Vec::new(),
    };
    for &n in &n_values {
        let dec = random_decomp(n, cfg.d, derive_seed(cfg.master_seed, &[streams::INIT, n as u64]))?;
        vs_n.push(info_row(n.to_string(), &fisher_polynomial(&dec, &theta, cfg.t, cfg.dt, floor)?, &[]));
    }

    let mut vs_delta = Table {
        name: "fisher_vs_delta".into(),
        header: info_header("delta", k, &["contribution_11"]),
        rows: Vec::new(),
    };
    let mut delta_points = Vec::new();
    if !delta_values.is_empty() {
        if k < 2 {
            return Err(HarnessError::Config("delta sweep needs at least two polynomial coefficients".into()));
        }
        for &delta in &delta_values {
            let dec = two_block_decomp(cfg.n, delta)?;
            let report = fisher_polynomial(&dec, &theta, cfg.t, cfg.dt, floor)?;
            let contribution = report.direction_contribution(1, 1, 1);
            vs_delta.push(info_row(fmt_f64(delta), &report, &[contribution]));
            delta_points.push((delta, contribution));
        }
    }

    let agreement: Vec<(f64, f64, f64)> = run_reps(cfg.workers, cfg.reps, |rep| {
        let seed = stream_seed(cfg.master_seed, streams::INIT, rep);
        let dec = random_decomp(cfg.n, cfg.d, seed).map_err(in_rep(rep))?;
        let ode = fisher_polynomial(&dec, &[alpha0], cfg.t, cfg.dt, floor).map_err(in_rep(rep))?.info_matrix[(0, 0)];
        let closed = linear_closed_form(&dec.reconstruct(), alpha0, cfg.t, cfg.dt);
        Ok((ode, closed, rel_dev(ode, closed)))
    })?;
    let mut closed_table = Table::new("fisher_closed_form", &["rep", "T", "ode", "closed_form", "rel_dev"]);
    for (rep, (ode, closed, dev)) in agreement.iter().enumerate() {
        closed_table.push(vec![
            rep.to_string(),
            cfg.t.to_string(),
            fmt_f64(*ode),
            fmt_f64(*closed),
            fmt_f64(*dev),
        ]);
    }

    let mut record = RunRecord::new(cfg);
    record.seeds = (0..cfg.reps)
        .map(|rep| SeedEntry {
            label: "init".into(),
            rep,
            seed: stream_seed(cfg.master_seed, streams::INIT, rep),
        })
        .collect();
    record.per_rep = agreement
        .iter()
        .map(|(ode, closed, dev)| json!({"ode": ode, "closed_form": closed, "rel_dev": dev}))
        .collect();
    let slope = |pts: &[(f64, f64)]| {
        if pts.len() >= 2 {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            stats::log_log_slope(&x, &y).slope
        } else {
            f64::NAN
        }
    };
    record.summary = json!({
        "T_slope": slope(&t_points),
        "delta_slope_11": slope(&delta_points),
        "max_closed_form_rel_dev": agreement.iter().map(|a| a.2).fold(0.0, f64::max),
    });
    Ok(RunOutput {
        record,
        tables: vec![vs_t, vs_n, vs_delta, closed_table],
    }
    .finish(start.elapsed()))
}
