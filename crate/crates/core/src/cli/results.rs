//! Plot-ready CSV outputs of a SLAM run.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;

use super::fmt_f64;
use crate::slam::SmoothedTrajectory;
use crate::types::WeightRow;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const LANDMARKS_FILE: &str = "landmarks.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const SNAPSHOTS_FILE: &str = "snapshots.csv";

#[derive(Debug, thiserror::Error)]
pub enum ResultsError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
}

/// Weights of the strongest candidate at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestCandidate {
    pub i: usize,
    pub w_fwd: f64,
    pub w_bwd: f64,
    pub w_pos: f64,
    pub w_combined: f64,
}

/// Per-step summary of a weight row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepWeights {
    pub t: usize,
    /// `None` when no candidate existed yet.
    pub best: Option<BestCandidate>,
    pub sigma_wp: f64,
}

impl From<&WeightRow> for StepWeights {
    fn from(r: &WeightRow) -> Self {
        let best = (0..r.w_combined.len()).max_by(|&a, &b| r.w_combined[a].total_cmp(&r.w_combined[b])).map(|i| {
            BestCandidate { i, w_fwd: r.w_fwd[i], w_bwd: r.w_bwd[i], w_pos: r.w_pos[i], w_combined: r.w_combined[i] }
        });
        Self { t: r.t, best, sigma_wp: r.sigma_wp }
    }
}

/// Positions of every pose after one accepted loop closure.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub landmark_index: usize,
    pub positions: Vec<Vector2<f64>>,
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>, ResultsError> {
    let file = File::create(path).map_err(|source| ResultsError::Io { path: path.to_path_buf(), source })?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), ResultsError> {
    let csv_err = |source| ResultsError::Csv { path: path.to_path_buf(), source };
    let mut w = create(path)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| ResultsError::Io { path: path.to_path_buf(), source })
}

/// Writes `trajectory.csv`, `events.csv`, `landmarks.csv` and, when given,
/// `weights.csv` into `dir`, creating it if needed. Returns the written paths.
///
/// The weights file has one row per step with the weights of the strongest
/// candidate (empty fields when there was none).
pub fn write_results(
    trajectory: &SmoothedTrajectory,
    weights: Option<&[StepWeights]>,
    dir: &Path,
) -> Result<Vec<PathBuf>, ResultsError> {
    std::fs::create_dir_all(dir).map_err(|source| ResultsError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();

    let path = dir.join(TRAJECTORY_FILE);
    write_rows(
        &path,
        &["t", "p_x", "p_y", "psi", "var_px", "var_py"],
        trajectory.poses.iter().enumerate().map(|(t, p)| {
            vec![
                t.to_string(),
                fmt_f64(p.mean[0]),
                fmt_f64(p.mean[1]),
                fmt_f64(p.mean[2]),
                fmt_f64(p.cov[(0, 0)]),
                fmt_f64(p.cov[(1, 1)]),
            ]
        }),
    )?;
    written.push(path);

    let path = dir.join(EVENTS_FILE);
    write_rows(
        &path,
        &["k", "t_now", "t_then", "direction", "weight"],
        trajectory.events.iter().map(|e| {
            vec![
                e.landmark_index.to_string(),
                e.time_now.to_string(),
                e.time_then.to_string(),
                e.direction.to_string(),
                fmt_f64(e.weight),
            ]
        }),
    )?;
    written.push(path);

    let path = dir.join(LANDMARKS_FILE);
    write_rows(
        &path,
        &["k", "l_x", "l_y", "var_x", "var_y", "cov_xy"],
        trajectory.landmarks.iter().enumerate().map(|(k, l)| {
            vec![
                k.to_string(),
                fmt_f64(l.mean.x),
                fmt_f64(l.mean.y),
                fmt_f64(l.cov[(0, 0)]),
                fmt_f64(l.cov[(1, 1)]),
                fmt_f64(l.cov[(0, 1)]),
            ]
        }),
    )?;
    written.push(path);

    if let Some(rows) = weights {
        let path = dir.join(WEIGHTS_FILE);
        write_rows(
            &path,
            &["t", "i_best", "w_fwd", "w_bwd", "w_pos", "w_combined", "sigma_wp"],
            rows.iter().map(|r| {
                let mut row = vec![r.t.to_string()];
                match r.best {
                    Some(b) => row.extend([
                        b.i.to_string(),
                        fmt_f64(b.w_fwd),
                        fmt_f64(b.w_bwd),
                        fmt_f64(b.w_pos),
                        fmt_f64(b.w_combined),
                    ]),
                    None => row.extend(std::iter::repeat_n(String::new(), 5)),
                }
                row.push(fmt_f64(r.sigma_wp));
                row
            }),
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Writes the positions after every accepted loop closure, long format
/// `k,t,p_x,p_y`, for animating how the estimate evolves.
pub fn write_snapshots(snapshots: &[Snapshot], path: &Path) -> Result<(), ResultsError> {
    write_rows(
        path,
        &["k", "t", "p_x", "p_y"],
        snapshots.iter().flat_map(|s| {
            s.positions
                .iter()
                .enumerate()
                .map(move |(t, p)| vec![s.landmark_index.to_string(), t.to_string(), fmt_f64(p.x), fmt_f64(p.y)])
        }),
    )
}

/// Reads the positions back from a trajectory file.
pub fn read_trajectory_positions(path: &Path) -> Result<Vec<Vector2<f64>>, ResultsError> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|source| ResultsError::Csv { path: path.to_path_buf(), source })?;
    let parse = |line: u64, message: String| ResultsError::Parse { path: path.to_path_buf(), line, message };
    let headers = reader.headers().map_err(|source| ResultsError::Csv { path: path.to_path_buf(), source })?.clone();
    let col =
        |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| parse(1, format!("missing column '{name}'")));
    let (cx, cy) = (col("p_x")?, col("p_y")?);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| ResultsError::Csv { path: path.to_path_buf(), source })?;
        let line = record.position().map_or(0, |p| p.line());
        let value = |c: usize| -> Result<f64, ResultsError> {
            record
                .get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse(line, format!("column {}: not a number", headers.get(c).unwrap_or("?"))))
        };
        out.push(Vector2::new(value(cx)?, value(cy)?));
    }
    Ok(out)
}
