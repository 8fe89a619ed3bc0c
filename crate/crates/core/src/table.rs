//! Trajectory CSV: one header row, one row per recorded sample.
//!
//! Values are written with 17 significant digits so re-parsing is exact.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::sim::Trajectory;

pub const METRIC_COLUMNS: [&str; 4] = ["agreement_error", "routing_error", "gamma_dist", "lyapunov"];

/// Parsed trajectory table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn header(traj: &Trajectory) -> Vec<String> {
    let width = |v: &[nalgebra::DVector<f64>]| v.first().map_or(0, |x| x.len());
    let mut h = vec!["t".to_string()];
    for (prefix, n) in [
        ("w", width(&traj.w)),
        ("x", width(&traj.x)),
        ("eta", width(&traj.controller_state)),
        ("lambda", width(&traj.lambda)),
    ] {
        h.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    h.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
    h
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn to_table(traj: &Trajectory) -> Table {
    let rows = (0..traj.len())
        .map(|k| {
            let mut row = vec![traj.times[k]];
            row.extend(traj.w[k].iter());
            row.extend(traj.x[k].iter());
            row.extend(traj.controller_state[k].iter());
            row.extend(traj.lambda[k].iter());
            row.extend([
                traj.agreement_error[k],
                traj.routing_error[k],
                traj.gamma_dist[k],
                traj.lyapunov[k],
            ]);
            row
        })
        .collect();
    Table {
        header: header(traj),
        rows,
    }
}

pub fn write_table<W: Write>(table: &Table, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Csv(e.to_string());
    w.write_record(&table.header).map_err(csv_err)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|&v| fmt(v))).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    write_table(&to_table(traj), out)
}

/// Reads a table written by [`write_table`]. Every row must match the header width.
pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::Csv("first column must be t".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Csv(format!("row {}: cannot parse {f:?}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != header.len() {
            return Err(Error::Csv(format!(
                "row {}: {} fields, header has {}",
                i + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}
