//! CSV and TOML file formats.
//!
//! * states: `t,x1..xd`, one row per step.
//! * counts: `t,y1..yN`, one row per step.
//! * beliefs: `t,m1..md,V11,V12..Vdd` with the covariance's upper triangle in
//!   row-major order.
//! * population: TOML with `delta`, `alpha` and `beta` (array of rows).
//!
//! Numbers are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces the values bit for bit.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::neural::{PoissonPopulation, PopulationFile};

fn write_rows(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for (t, row) in rows.enumerate() {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push((t + 1).to_string());
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn vector_header(prefix: &str, n: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("{prefix}{i}")))
        .collect()
}

/// Writes `t,x1..xd`.
pub fn write_states_csv(path: &Path, states: &[DVector<f64>]) -> Result<()> {
    let d = states.first().map_or(0, |s| s.len());
    write_rows(path, vector_header("x", d), states.iter().map(|s| s.iter().copied().collect()))
}

/// Writes `t,y1..yN`.
pub fn write_counts_csv(path: &Path, counts: &[DVector<f64>]) -> Result<()> {
    let n = counts.first().map_or(0, |s| s.len());
    write_rows(path, vector_header("y", n), counts.iter().map(|s| s.iter().copied().collect()))
}

/// Header of the belief format for dimension `d`.
pub fn belief_header(d: usize) -> Vec<String> {
    let mut h = vector_header("m", d);
    for i in 1..=d {
        for j in i..=d {
            h.push(format!("V{i}{j}"));
        }
    }
    h
}

/// Writes `t,m1..md,V11,V12..Vdd`.
pub fn write_beliefs_csv(path: &Path, means: &[DVector<f64>], covs: &[DMatrix<f64>]) -> Result<()> {
    if means.len() != covs.len() {
        return Err(Error::Dimension("one covariance per mean required".into()));
    }
    let d = means.first().map_or(0, |m| m.len());
    write_rows(
        path,
        belief_header(d),
        means.iter().zip(covs).map(|(m, v)| {
            let mut row: Vec<f64> = m.iter().copied().collect();
            for i in 0..d {
                for j in i..d {
                    row.push(v[(i, j)]);
                }
            }
            row
        }),
    )
}

/// Reads a `t,...` file back into one vector per row, dropping the `t` column.
pub fn read_vectors_csv(path: &Path) -> Result<Vec<DVector<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(DVector::from_vec(vals));
    }
    Ok(out)
}

pub fn write_population(path: &Path, pop: &PoissonPopulation) -> Result<()> {
    let text = toml::to_string(&pop.to_file()).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_population(path: &Path) -> Result<PoissonPopulation> {
    let text = fs::read_to_string(path)?;
    let file: PopulationFile = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    PoissonPopulation::from_file(&file)
}
