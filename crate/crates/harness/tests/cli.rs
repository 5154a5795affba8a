use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::dmatrix;
use rdpg_core::dynamics::induced_p_velocity;
use rdpg_core::io::write_matrix;
use rdpg_core::linalg::orthogonal_complement;
use rdpg_core::model::{probability_matrix, spectral_decompose, DEFAULT_GAP_TOL};

fn rdpg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdpg")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(rdpg(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(rdpg(&["psi"]).status.code(), Some(1));
    assert_eq!(rdpg(&["psi", "--input", "/nonexistent/x.csv"]).status.code(), Some(1));
    assert_eq!(rdpg(&["--help"]).status.code(), Some(0));
}

#[test]
fn psi_reports_the_witness_entry() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    write_matrix(&x, &(dmatrix![1.0, 1.0; 2.0, 1.0; 2.0, 2.0] / 3.0)).unwrap();
    let out = rdpg(&["psi", "--input", p(&x)]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let line = text.lines().next().unwrap();
    let value: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!((value - 2.0 / 2187.0).abs() < 1e-15, "{line}");
}

#[test]
fn unrealizable_velocity_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let x = dmatrix![0.5, 0.1; 0.4, 0.3; 0.3, 0.2; 0.6, 0.1; 0.2, 0.4];
    let dec = spectral_decompose(&probability_matrix(&x), 2, DEFAULT_GAP_TOL).unwrap();
    let w = orthogonal_complement(&dec.eigenvectors);
    let good = induced_p_velocity(&(&x * dmatrix![0.3, 0.1; -0.2, 0.4]), &x).unwrap();
    let bad = &good + &w * w.transpose();
    let (xp, gp, bp) = (dir.path().join("x.csv"), dir.path().join("good.csv"), dir.path().join("bad.csv"));
    write_matrix(&xp, &x).unwrap();
    write_matrix(&gp, &good).unwrap();
    write_matrix(&bp, &bad).unwrap();
    assert_eq!(rdpg(&["lift", "--input", p(&xp), "--pdot", p(&gp)]).status.code(), Some(0));
    assert_eq!(rdpg(&["lift", "--input", p(&xp), "--pdot", p(&bp)]).status.code(), Some(2));
}

#[test]
fn exp1_from_config_writes_tables_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp1.json");
    fs::write(
        &config,
        r#"{"n": 30, "T": 12, "reps": 2, "sweep": [{"name": "n_a", "values": [0, 1, 5]}]}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let args = ["exp1", "--config", p(&config), "--out", p(&out_dir), "--seed", "7"];
    let out = rdpg(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["err_vs_t.csv", "err_vs_na.csv", "alpha_fit.csv", "run_record.json"] {
        assert!(out_dir.join(name).is_file(), "{name} missing");
    }
    let sweep = fs::read_to_string(out_dir.join("err_vs_na.csv")).unwrap();
    assert!(sweep.starts_with("n_a,method,rep,status,mean_err,terminal_err"));
    assert!(sweep.contains("anchor_rank_deficient"));
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("run_record.json")).unwrap()).unwrap();
    assert_eq!(record["config"]["master_seed"], 7);
    assert_eq!(record["config"]["n"], 30);

    assert_eq!(rdpg(&args).status.code(), Some(1));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(rdpg(&forced).status.code(), Some(0));
}

#[test]
fn simulate_sample_embed_align_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let sim = rdpg(&["simulate", "--n", "20", "--d", "2", "--frames", "6", "--alpha", "-0.3,0.003", "--out", p(&d("sim"))]);
    assert_eq!(sim.status.code(), Some(0), "{}", String::from_utf8_lossy(&sim.stderr));
    let traj = d("sim").join("trajectory");
    assert_eq!(rdpg(&["sample", "--input", p(&traj), "--m", "3", "--out", p(&d("sample"))]).status.code(), Some(0));
    let adj = d("sample").join("adjacency");
    assert_eq!(rdpg(&["embed", "--input", p(&adj), "--d", "2", "--jitter", "--out", p(&d("embed"))]).status.code(), Some(0));
    let emb = d("embed").join("embedding");
    let align = rdpg(&["align", "--input", p(&emb), "--method", "sequential", "--truth", p(&traj), "--out", p(&d("align"))]);
    assert_eq!(align.status.code(), Some(0), "{}", String::from_utf8_lossy(&align.stderr));
    assert!(stdout(&align).contains("max error"));
    assert!(d("align").join("alignment.json").is_file());
}
