//! Matrix, trajectory and embedding-series files.
//!
//! Matrices are stored either as headerless CSV (one matrix row per line,
//! shortest round-trip decimal formatting) or as JSON
//! `{"n": rows, "d": cols, "entries": [row-major values]}`. Sequences are
//! directories with one CSV per frame plus an `index.json`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsSpec, Trajectory};
use crate::error::{Error, Result};
use crate::observation::EmbeddingSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub n: usize,
    pub d: usize,
    pub entries: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            n: m.nrows(),
            d: m.ncols(),
            entries: m.transpose().as_slice().to_vec(),
        }
    }

    pub fn into_matrix(self) -> Result<DMatrix<f64>> {
        if self.entries.len() != self.n * self.d {
            return Err(Error::InvalidInput(format!(
                "matrix JSON declares {}x{} but holds {} entries",
                self.n,
                self.d,
                self.entries.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.n, self.d, &self.entries))
    }
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("{}: line {}: cannot parse '{f}'", path.display(), i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("matrix CSV"));
    }
    let cols = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::InvalidInput(format!(
            "{}: row {} has {} fields, expected {cols}",
            path.display(),
            bad + 1,
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn write_matrix_json(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&MatrixJson::from_matrix(m))?)?;
    Ok(())
}

pub fn read_matrix_json(path: &Path) -> Result<DMatrix<f64>> {
    let parsed: MatrixJson = serde_json::from_str(&fs::read_to_string(path)?)?;
    parsed.into_matrix()
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Read a matrix, choosing the format by extension (`.json` or CSV).
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    if is_json(path) {
        read_matrix_json(path)
    } else {
        read_matrix_csv(path)
    }
}

/// Write a matrix, choosing the format by extension (`.json` or CSV).
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    if is_json(path) {
        write_matrix_json(path, m)
    } else {
        write_matrix_csv(path, m)
    }
}

fn frame_name(t: usize) -> String {
    format!("frame_{t:05}.csv")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrajectoryIndex {
    times: Vec<f64>,
    dt: f64,
    files: Vec<String>,
    #[serde(default)]
    spec: Option<DynamicsSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SeriesIndex {
    times: Vec<f64>,
    d: usize,
    files: Vec<String>,
    #[serde(default)]
    seeds: Vec<u64>,
    #[serde(default)]
    gauges_applied: Option<Vec<MatrixJson>>,
}

fn write_frames(dir: &Path, frames: &[DMatrix<f64>]) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    frames
        .iter()
        .enumerate()
        .map(|(t, m)| {
            let name = frame_name(t);
            write_matrix_csv(&dir.join(&name), m)?;
            Ok(name)
        })
        .collect()
}

fn read_frames(dir: &Path, files: &[String]) -> Result<Vec<DMatrix<f64>>> {
    files.iter().map(|f| read_matrix_csv(&dir.join(f))).collect()
}

pub fn write_trajectory_dir(dir: &Path, traj: &Trajectory) -> Result<()> {
    let files = write_frames(dir, &traj.states)?;
    let index = TrajectoryIndex {
        times: traj.times.clone(),
        dt: traj.dt,
        files,
        spec: traj.spec.clone(),
    };
    fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn read_trajectory_dir(dir: &Path) -> Result<Trajectory> {
    let index: TrajectoryIndex = serde_json::from_str(&fs::read_to_string(dir.join("index.json"))?)?;
    let states = read_frames(dir, &index.files)?;
    if states.len() != index.times.len() {
        return Err(Error::InvalidInput("trajectory index times do not match files".into()));
    }
    let traj = Trajectory {
        states,
        times: index.times,
        dt: index.dt,
        spec: index.spec,
    };
    traj.check_grid()?;
    Ok(traj)
}

pub fn write_series_dir(dir: &Path, series: &EmbeddingSeries) -> Result<()> {
    let files = write_frames(dir, &series.embeddings)?;
    let index = SeriesIndex {
        times: series.times.clone(),
        d: series.d,
        files,
        seeds: series.seeds.clone(),
        gauges_applied: series
            .gauges_applied
            .as_ref()
            .map(|g| g.iter().map(MatrixJson::from_matrix).collect()),
    };
    fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn read_series_dir(dir: &Path) -> Result<EmbeddingSeries> {
    let index: SeriesIndex = serde_json::from_str(&fs::read_to_string(dir.join("index.json"))?)?;
    let mut series = EmbeddingSeries::new(read_frames(dir, &index.files)?, index.times)?;
    if series.d != index.d {
        return Err(Error::InvalidInput(format!(
            "series index declares d = {} but frames have {} columns",
            index.d, series.d
        )));
    }
    series.seeds = index.seeds;
    series.gauges_applied = index
        .gauges_applied
        .map(|g| g.into_iter().map(MatrixJson::into_matrix).collect::<Result<Vec<_>>>())
        .transpose()?;
    Ok(series)
}

/// Read a trajectory from a directory with `index.json`, or a single matrix
/// file treated as a one-frame trajectory with unit step.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    if path.is_dir() {
        read_trajectory_dir(path)
    } else {
        Trajectory::new(vec![read_matrix(path)?], 1.0)
    }
}

pub fn read_series(path: &Path) -> Result<EmbeddingSeries> {
    if path.is_dir() {
        read_series_dir(path)
    } else {
        EmbeddingSeries::new(vec![read_matrix(path)?], vec![0.0])
    }
}

/// Path of the sidecar metadata file for an output file, `<name>.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = dmatrix![0.1, 1.0 / 3.0; -2.5e-17, 9.144947416552355e-4; f64::MAX, f64::MIN_POSITIVE];
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("0.1,0.3333333333333333\n"));
    }

    #[test]
    fn json_round_trip_is_row_major() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0];
        write_matrix(&path, &m).unwrap();
        let raw: MatrixJson = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(raw.entries, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!((raw.n, raw.d), (2, 3));
        assert_eq!(read_matrix(&path).unwrap(), m);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ragged = dir.path().join("r.csv");
        fs::write(&ragged, "1,2\n3\n").unwrap();
        assert!(matches!(read_matrix(&ragged), Err(Error::InvalidInput(_))));
        let junk = dir.path().join("j.csv");
        fs::write(&junk, "1,x\n").unwrap();
        assert!(read_matrix(&junk).is_err());
        let empty = dir.path().join("e.csv");
        fs::write(&empty, "").unwrap();
        assert!(matches!(read_matrix(&empty), Err(Error::EmptyInput(_))));
        let bad_json = dir.path().join("b.json");
        fs::write(&bad_json, r#"{"n":2,"d":2,"entries":[1,2,3]}"#).unwrap();
        assert!(read_matrix(&bad_json).is_err());
    }

    #[test]
    fn trajectory_and_series_directories_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let states = vec![dmatrix![0.1, 0.2; 0.3, 0.4], dmatrix![0.15, 0.25; 0.35, 0.45]];
        let mut traj = Trajectory::new(states.clone(), 0.05).unwrap();
        traj.spec = Some(DynamicsSpec::polynomial(vec![-0.3, 0.003]));
        write_trajectory_dir(&dir.path().join("traj"), &traj).unwrap();
        assert_eq!(read_trajectory(&dir.path().join("traj")).unwrap(), traj);

        let mut series = EmbeddingSeries::new(states, vec![0.0, 0.05]).unwrap();
        series.seeds = vec![1, 2];
        series.gauges_applied = Some(vec![dmatrix![0.0, 1.0; 1.0, 0.0], DMatrix::identity(2, 2)]);
        write_series_dir(&dir.path().join("series"), &series).unwrap();
        assert_eq!(read_series(&dir.path().join("series")).unwrap(), series);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar_path(Path::new("out/err_vs_t.csv")), PathBuf::from("out/err_vs_t.meta.json"));
    }
}
