//! The `rdpg` command line.
//!
//! Exit status: 0 on success, 1 for usage and validation errors, 2 when a
//! numerical stage fails (rank deficiency, degenerate spectrum, and so on).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rdpg_core::alignment::{align_anchor, align_none, align_sequential};
use rdpg_core::dynamics::{integrate, DynamicsSpec, Trajectory};
use rdpg_core::geometry::{curvature_norm, horizontal_lift_with_tol, laplacian_psi, REALIZABILITY_TOL};
use rdpg_core::inference::{crb_baseline_check, fisher_polynomial, fit_polynomial_coeffs, lyapunov_invert_with_tol, DEFAULT_PROB_FLOOR};
use rdpg_core::io;
use rdpg_core::model::{probability_matrix, spectral_decompose, ProbMatrix, DEFAULT_GAP_TOL};
use rdpg_core::observation::{ase, average_adjacency, inject_gauge_jitter, sample_adjacency, EmbeddingSeries};
use rdpg_core::random::{derive_seed, rng_from_seed, uniform_positive_ball};
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::output::{OutputDir, RunOutput};
use crate::{exp1, exp2, fisher_suite, holonomy, observation_master, stream_seed, streams};

#[derive(Debug, Parser)]
#[command(name = "rdpg", version, about = "Latent-position dynamics on random dot product graphs")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON config file; keys override the experiment defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Monte Carlo repetitions.
    #[arg(long, global = true, value_name = "N")]
    pub reps: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Desk-scale run: halves n for the two pipeline experiments.
    #[arg(long, global = true)]
    pub quick: bool,
    /// Worker threads for repetitions.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Anchor,
    Sequential,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Polynomial,
    Laplacian,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate latent dynamics and write the trajectory.
    Simulate {
        /// Initial configuration (CSV or JSON); drawn from the positive unit ball if absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        family: Option<Family>,
        /// Polynomial coefficients, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        alpha: Option<Vec<f64>>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// Number of frames.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Draw averaged adjacency matrices for every frame of a trajectory.
    Sample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        rep: u64,
    },
    /// Adjacency spectral embedding of a matrix or a directory of frames.
    Embed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        d: usize,
        /// Right-multiply each frame by a random orthogonal matrix.
        #[arg(long)]
        jitter: bool,
    },
    /// Align an embedding series.
    Align {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "sequential")]
        method: Method,
        #[arg(long, value_delimiter = ',')]
        anchors: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0)]
        reference: usize,
        /// True trajectory for per-frame errors.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Horizontal lift of a P-velocity at the configuration in --input.
    Lift {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        pdot: PathBuf,
        #[arg(long, default_value_t = REALIZABILITY_TOL)]
        tol: f64,
    },
    /// Curvature of the horizontal fields M1 X and M2 X.
    Curvature {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        m1: PathBuf,
        #[arg(long)]
        m2: PathBuf,
    },
    /// Laplacian holonomy generator Psi(X).
    Psi {
        #[arg(long)]
        input: PathBuf,
    },
    /// Recover the determined blocks of a symmetric generator from P and P'.
    Invert {
        /// Latent positions X, or P itself with --p-space.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        pdot: PathBuf,
        #[arg(long, default_value_t = REALIZABILITY_TOL)]
        tol: f64,
        #[arg(long)]
        p_space: bool,
    },
    /// Fit polynomial coefficients to a trajectory.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        degree: usize,
        /// Frames already hold P rather than X.
        #[arg(long)]
        p_space: bool,
    },
    /// Fisher information for polynomial coefficients at a configuration.
    Fisher {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
        /// Last snapshot index (snapshots 0..=T).
        #[arg(long = "snapshots", default_value_t = 50)]
        snapshots: usize,
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
        #[arg(long, default_value_t = DEFAULT_PROB_FLOOR)]
        prob_floor: f64,
    },
    /// Anchor-alignment experiment.
    Exp1,
    /// Community spiral field-recovery experiment.
    Exp2,
    /// Polynomial versus Laplacian holonomy suite.
    Holonomy,
    /// Fisher information scaling suite.
    Fishersuite,
}

/// Parse `args` (including the program name), run, and return the exit status.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolve an experiment config: kind defaults, then the config file, then flags.
pub fn resolve_config(kind: ExperimentKind, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(kind, path)?,
        None => ExperimentConfig::defaults(kind),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(reps) = common.reps {
        cfg.reps = reps;
    }
    if let Some(w) = common.workers {
        cfg.workers = Some(w);
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    if common.quick {
        cfg = cfg.with_quick();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(common: &Common, cfg_dir: Option<&Path>, default: &str) -> Result<OutputDir> {
    let path = common
        .out
        .clone()
        .or_else(|| cfg_dir.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("runs").join(default));
    OutputDir::create(&path, common.force)
}

/// Optional output directory for the analysis commands.
fn maybe_output(common: &Common) -> Result<Option<OutputDir>> {
    common.out.as_ref().map(|p| OutputDir::create(p, common.force)).transpose()
}

fn run_experiment(kind: ExperimentKind, common: &Common, run: fn(&ExperimentConfig) -> Result<RunOutput>) -> Result<String> {
    let cfg = resolve_config(kind, common)?;
    let out = output_dir(common, cfg.output_dir.as_deref(), kind.as_str())?;
    let result = run(&cfg)?;
    out.write_run(&result)?;
    Ok(format!(
        "{}: {} reps, {} tables written to {} in {:.2}s",
        kind,
        cfg.reps,
        result.tables.len(),
        out.path().display(),
        result.record.wall_time_secs
    ))
}

fn format_matrix(m: &DMatrix<f64>) -> String {
    m.row_iter()
        .map(|r| r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
}

fn read_states(path: &Path, p_space: bool) -> Result<Trajectory> {
    let traj = io::read_trajectory(path)?;
    if p_space {
        return Ok(traj);
    }
    Ok(traj.probability_states())
}

pub fn execute(cli: &Cli) -> Result<String> {
    let common = &cli.common;
    match &cli.command {
        Command::Exp1 => run_experiment(ExperimentKind::Exp1Anchor, common, exp1::run),
        Command::Exp2 => run_experiment(ExperimentKind::Exp2Pipeline, common, exp2::run),
        Command::Holonomy => run_experiment(ExperimentKind::HolonomySuite, common, holonomy::run),
        Command::Fishersuite => run_experiment(ExperimentKind::FisherSuite, common, fisher_suite::run),
        Command::Simulate {
            input,
            family,
            alpha,
            n,
            d,
            frames,
            dt,
        } => {
            let mut cfg = resolve_config(ExperimentKind::Custom, common)?;
            cfg.n = n.unwrap_or(cfg.n);
            cfg.d = d.unwrap_or(cfg.d);
            cfg.t = frames.unwrap_or(cfg.t);
            cfg.dt = dt.unwrap_or(cfg.dt);
            match family {
                Some(Family::Laplacian) => cfg.dynamics = DynamicsSpec::laplacian(),
                Some(Family::Polynomial) | None if alpha.is_some() => {
                    cfg.dynamics = DynamicsSpec::polynomial(alpha.clone().unwrap_or_default())
                }
                Some(Family::Polynomial) | None => {}
            }
            let x0 = match input {
                Some(path) => io::read_matrix(path)?,
                None => uniform_positive_ball(&mut rng_from_seed(stream_seed(cfg.master_seed, streams::INIT, 0)), cfg.n, cfg.d),
            };
            cfg.n = x0.nrows();
            cfg.d = x0.ncols();
            cfg.validate()?;
            let out = output_dir(common, cfg.output_dir.as_deref(), "simulate")?;
            let traj = integrate(&cfg.dynamics, &x0, cfg.t - 1, cfg.dt)?;
            io::write_trajectory_dir(&out.join("trajectory"), &traj)?;
            out.write_json("config.json", &cfg)?;
            Ok(format!(
                "simulate: {} frames of a {}x{} configuration written to {}",
                traj.len(),
                cfg.n,
                cfg.d,
                out.join("trajectory").display()
            ))
        }
        Command::Sample { input, m, rep } => {
            if *m == 0 {
                return Err(HarnessError::Config("--m must be at least 1".into()));
            }
            let traj = io::read_trajectory(input)?;
            let master = observation_master(common.seed.unwrap_or(ExperimentConfig::defaults(ExperimentKind::Custom).master_seed));
            let mut frames = Vec::with_capacity(traj.len());
            let mut seeds = Vec::new();
            for (t, (x, &time)) in traj.states.iter().zip(&traj.times).enumerate() {
                let p = probability_matrix(x);
                let samples = (0..*m)
                    .map(|s| {
                        let seed = derive_seed(master, &[*rep, t as u64, s as u64]);
                        seeds.push(seed);
                        sample_adjacency(&p, seed, time)
                    })
                    .collect::<rdpg_core::Result<Vec<_>>>()?;
                frames.push(average_adjacency(&samples)?);
            }
            let mut series = EmbeddingSeries::new(frames, traj.times.clone())?;
            series.seeds = seeds;
            let out = output_dir(common, None, "sample")?;
            io::write_series_dir(&out.join("adjacency"), &series)?;
            Ok(format!("sample: {} frames x {m} graphs written to {}", traj.len(), out.join("adjacency").display()))
        }
        Command::Embed { input, d, jitter } => {
            let adj = io::read_series(input)?;
            let frames = adj.embeddings.iter().map(|a| ase(a, *d)).collect::<rdpg_core::Result<Vec<_>>>()?;
            let mut series = EmbeddingSeries::new(frames, adj.times.clone())?;
            if *jitter {
                let seed = stream_seed(
                    common.seed.unwrap_or(ExperimentConfig::defaults(ExperimentKind::Custom).master_seed),
                    streams::JITTER,
                    0,
                );
                series = inject_gauge_jitter(&series, seed);
            }
            let out = output_dir(common, None, "embed")?;
            io::write_series_dir(&out.join("embedding"), &series)?;
            Ok(format!("embed: {} frames at d = {d} written to {}", series.len(), out.join("embedding").display()))
        }
        Command::Align {
            input,
            method,
            anchors,
            reference,
            truth,
        } => {
            let series = io::read_series(input)?;
            let report = match method {
                Method::Anchor => {
                    let anchors = anchors
                        .as_ref()
                        .ok_or_else(|| HarnessError::Config("--method anchor needs --anchors".into()))?;
                    align_anchor(&series, anchors, *reference)?
                }
                Method::Sequential => align_sequential(&series)?,
                Method::None => align_none(&series),
            };
            let aligned = report.apply(&series)?;
            let out = output_dir(common, None, "align")?;
            io::write_series_dir(&out.join("aligned"), &aligned)?;
            let mut summary = format!("align: {} frames aligned by {}", aligned.len(), report.method);
            let report = match truth {
                Some(path) => {
                    let truth = io::read_trajectory(path)?;
                    let report = report.with_errors(&series, &truth.states)?;
                    let mut t = crate::Table::new("errors", &["t", "err"]);
                    for (time, e) in aligned.times.iter().zip(&report.per_time_error) {
                        t.push(vec![crate::output::fmt_f64(*time), crate::output::fmt_f64(*e)]);
                    }
                    let cfg = ExperimentConfig::defaults(ExperimentKind::Custom);
                    out.write_table(&t, &cfg)?;
                    let max = report.per_time_error.iter().copied().fold(0.0, f64::max);
                    summary.push_str(&format!(", max error {max:e}"));
                    report
                }
                None => report,
            };
            out.write_json("alignment.json", &report)?;
            Ok(summary)
        }
        Command::Lift { input, pdot, tol } => {
            let x = io::read_matrix(input)?;
            let pdot = io::read_matrix(pdot)?;
            let dec = spectral_decompose(&probability_matrix(&x), x.ncols(), DEFAULT_GAP_TOL)?;
            let lift = horizontal_lift_with_tol(&dec, &pdot, *tol)?;
            if let Some(out) = maybe_output(common)? {
                io::write_matrix(&out.join("lift.csv"), &lift)?;
            }
            Ok(format!("lift: |X'|_F = {:e}\n{}", lift.norm(), format_matrix(&lift)))
        }
        Command::Curvature { input, m1, m2 } => {
            let x = io::read_matrix(input)?;
            let report = curvature_norm(&x, &io::read_matrix(m1)?, &io::read_matrix(m2)?)?;
            if let Some(out) = maybe_output(common)? {
                out.write_json("curvature.json", &report)?;
            }
            Ok(format!(
                "curvature: |vertical bracket|^2 = {:e} (direct {:e}), |X^T [M1, M2] X|_F = {:e}",
                report.vertical_bracket_norm_sq,
                report.direct_norm_sq,
                report.projected_commutator.norm()
            ))
        }
        Command::Psi { input } => {
            let x = io::read_matrix(input)?;
            let psi = laplacian_psi(&x)?;
            if let Some(out) = maybe_output(common)? {
                io::write_matrix(&out.join("psi.csv"), &psi)?;
            }
            let head = if psi.ncols() >= 2 {
                format!("psi: entry (1,2) = {:e}", psi[(0, 1)])
            } else {
                "psi: d = 1, Psi is zero".to_string()
            };
            Ok(format!("{head}\n{}", format_matrix(&psi)))
        }
        Command::Invert { input, pdot, tol, p_space } => {
            let m = io::read_matrix(input)?;
            let pdot = io::read_matrix(pdot)?;
            let (p, d) = if *p_space {
                let d = rank_of(&m)?;
                (ProbMatrix::new(m, d)?, d)
            } else {
                let d = m.ncols();
                (probability_matrix(&m), d)
            };
            let dec = spectral_decompose(&p, d, DEFAULT_GAP_TOL)?;
            let inv = lyapunov_invert_with_tol(&dec, &pdot, *tol)?;
            if let Some(out) = maybe_output(common)? {
                io::write_matrix(&out.join("generator.csv"), &inv.generator())?;
                out.write_json("inversion.json", &inv)?;
            }
            Ok(format!(
                "invert: rank {d}, {} determined entries, null block dimension {}, residual {:e}",
                inv.determined_count(),
                inv.null_dim,
                inv.residual
            ))
        }
        Command::Fit { input, degree, p_space } => {
            let traj = read_states(input, *p_space)?;
            let fit = fit_polynomial_coeffs(&traj, *degree)?;
            if let Some(out) = maybe_output(common)? {
                out.write_json("alpha_fit.json", &fit)?;
            }
            let coeffs: Vec<String> = fit.coefficients.iter().map(|c| format!("{c:e}")).collect();
            Ok(format!(
                "fit: alpha = [{}], relative residual {:e}, condition {:e}",
                coeffs.join(", "),
                fit.relative_residual,
                fit.condition_number
            ))
        }
        Command::Fisher {
            input,
            theta,
            snapshots,
            dt,
            prob_floor,
        } => {
            let x = io::read_matrix(input)?;
            let dec = spectral_decompose(&probability_matrix(&x), x.ncols(), DEFAULT_GAP_TOL)?;
            let report = fisher_polynomial(&dec, theta, *snapshots, *dt, *prob_floor)?;
            let crb = crb_baseline_check(&report.info_matrix);
            if let Some(out) = maybe_output(common)? {
                out.write_json("fisher.json", &json!({"report": report, "crb": crb}))?;
            }
            Ok(format!(
                "fisher: rank {}, CRB trace {:e}, {} clipped weights\n{}",
                report.rank,
                report.crb_trace,
                report.clipped,
                format_matrix(&report.info_matrix)
            ))
        }
    }
}

fn rank_of(p: &DMatrix<f64>) -> Result<usize> {
    let r = rdpg_core::linalg::numerical_rank(p, rdpg_core::model::RANK_REL_TOL);
    if r == 0 {
        return Err(HarnessError::Config("probability matrix is zero".into()));
    }
    Ok(r)
}
