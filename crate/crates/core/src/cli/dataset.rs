//! Flat CSV dataset: one row per sample, optional ground truth per row.
//!
//! ```text
//! # rate_hz = 10
//! # units: t sample index, dt s, yp m, y_omega rad/s, ym uT, gt_p m, gt_psi rad
//! t,dt,yp_x,yp_y,y_omega,ym_x,ym_y,ym_z,gt_px,gt_py,gt_psi
//! 0,0.1,0.1,0.0,0.0,15.2,0.3,-41.8,0.0,0.0,0.0
//! ```
//!
//! `t` is the sample index and must be strictly increasing; samples are
//! numbered by row. Ground truth on row `t` is the true pose at sample `t`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use super::fmt_f64;
use crate::types::SensorSample;

pub const REQUIRED_COLUMNS: [&str; 8] = ["t", "dt", "yp_x", "yp_y", "y_omega", "ym_x", "ym_y", "ym_z"];
pub const TRUTH_COLUMNS: [&str; 3] = ["gt_px", "gt_py", "gt_psi"];

const UNITS_NOTE: &str = "t sample index, dt s, yp m, y_omega rad/s, ym uT, gt_p m, gt_psi rad";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruePose {
    pub position: Vector2<f64>,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rate_hz: Option<f64>,
    pub samples: Vec<SensorSample>,
    /// Present when every row carries the ground-truth columns.
    pub truth: Option<Vec<TruePose>>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("dataset has no samples")]
    Empty,
}

fn parse_err(line: u64, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse { line, message: message.into() }
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let file =
        std::fs::File::open(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    parse_dataset(file)
}

/// Parses the dataset format. Leading `#` lines carry metadata; `rate_hz = x`
/// is recognized and anything else is ignored.
pub fn parse_dataset<R: Read>(mut input: R) -> Result<Dataset, DatasetError> {
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(|source| DatasetError::Io { path: "<input>".into(), source })?;

    let mut rate_hz = None;
    for (n, line) in text.lines().enumerate() {
        let Some(meta) = line.trim_start().strip_prefix('#') else { break };
        if let Some((key, value)) = meta.split_once('=') {
            if key.trim() == "rate_hz" {
                let v: f64 = value.trim().parse().map_err(|_| parse_err(n as u64 + 1, "rate_hz is not a number"))?;
                rate_hz = Some(v);
            }
        }
    }

    let mut reader =
        csv::ReaderBuilder::new().comment(Some(b'#')).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(csv_line(&e), e.to_string()))?.clone();
    let header_line = headers.position().map_or(1, |p| p.line());
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut required = [0usize; 8];
    for (slot, name) in required.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = column(name).ok_or_else(|| parse_err(header_line, format!("missing column '{name}' in header")))?;
    }
    let truth_cols: Vec<Option<usize>> = TRUTH_COLUMNS.iter().map(|n| column(n)).collect();
    let truth_cols: Option<[usize; 3]> = match truth_cols.as_slice() {
        [Some(a), Some(b), Some(c)] => Some([*a, *b, *c]),
        [None, None, None] => None,
        _ => return Err(parse_err(header_line, "ground-truth columns must be all present or all absent")),
    };

    let mut samples = Vec::new();
    let mut truth = Vec::new();
    let mut last_t: Option<u64> = None;
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(csv_line(&e), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize, name: &str| -> Result<&str, DatasetError> {
            match record.get(col) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(parse_err(line, format!("missing value for column '{name}'"))),
            }
        };
        let real = |col: usize, name: &str| -> Result<f64, DatasetError> {
            let s = field(col, name)?;
            s.parse::<f64>().map_err(|_| parse_err(line, format!("column '{name}': '{s}' is not a number")))
        };
        let t_text = field(required[0], "t")?;
        let t: u64 = t_text
            .parse()
            .map_err(|_| parse_err(line, format!("column 't': '{t_text}' is not a non-negative integer")))?;
        if last_t.is_some_and(|prev| t <= prev) {
            return Err(parse_err(line, format!("index {t} does not increase")));
        }
        last_t = Some(t);
        let v: Vec<f64> = REQUIRED_COLUMNS[1..]
            .iter()
            .zip(&required[1..])
            .map(|(name, &col)| real(col, name))
            .collect::<Result<_, _>>()?;
        let sample = SensorSample {
            index: samples.len(),
            dt: v[0],
            odom_pos: Vector2::new(v[1], v[2]),
            odom_gyro: v[3],
            mag: Vector3::new(v[4], v[5], v[6]),
        };
        sample.validate().map_err(|e| parse_err(line, e.to_string()))?;
        samples.push(sample);
        if let Some(cols) = truth_cols {
            let g: Vec<f64> =
                TRUTH_COLUMNS.iter().zip(cols).map(|(name, col)| real(col, name)).collect::<Result<_, _>>()?;
            truth.push(TruePose { position: Vector2::new(g[0], g[1]), heading: g[2] });
        }
    }
    if samples.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(Dataset { rate_hz, samples, truth: truth_cols.map(|_| truth) })
}

fn csv_line(e: &csv::Error) -> u64 {
    e.position().map_or(0, |p| p.line())
}

/// Writes the dataset; ground-truth columns are emitted when `truth` is set.
pub fn write_dataset<W: Write>(dataset: &Dataset, out: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    if let Some(rate) = dataset.rate_hz {
        writeln!(out, "# rate_hz = {}", fmt_f64(rate))?;
    }
    writeln!(out, "# units: {UNITS_NOTE}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    if dataset.truth.is_some() {
        header.extend(TRUTH_COLUMNS);
    }
    w.write_record(&header)?;
    for (row, s) in dataset.samples.iter().enumerate() {
        let mut fields = vec![
            row.to_string(),
            fmt_f64(s.dt),
            fmt_f64(s.odom_pos.x),
            fmt_f64(s.odom_pos.y),
            fmt_f64(s.odom_gyro),
            fmt_f64(s.mag.x),
            fmt_f64(s.mag.y),
            fmt_f64(s.mag.z),
        ];
        if let Some(truth) = &dataset.truth {
            let g = truth[row];
            fields.extend([fmt_f64(g.position.x), fmt_f64(g.position.y), fmt_f64(g.heading)]);
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}
