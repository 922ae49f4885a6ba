//! CSV schemas and their readers and writers.
//!
//! Numbers are written in the shortest form that reads back to the same `f64`,
//! so files are reproducible byte for byte. Missing values are empty cells.

use std::fs;
use std::path::Path;

use qgeq::atlas::{EntropySurface, SurfacePoint};

use crate::error::CliError;

pub const SURFACE: &[&str] = &[
    "E",
    "Gamma",
    "admissible",
    "converged",
    "S",
    "beta",
    "gamma",
    "label",
    "witness_E",
    "witness_Gamma",
];
pub const VELOCITY: &[&str] = &["x2", "v1"];
pub const MC: &[&str] = &["n", "hits", "trials", "rate", "ci_low", "ci_high", "target"];
pub const FIELD: &[&str] = &["x1", "x2", "q", "psi"];
pub const HISTORY: &[&str] = &[
    "iteration",
    "phase",
    "information",
    "energy",
    "circulation",
    "beta",
    "gamma",
];
pub const GRADIENT: &[&str] = &["E", "Gamma", "beta", "gamma", "fd_beta", "fd_gamma", "ok"];
pub const CROSS_CHECK: &[&str] = &[
    "E",
    "Gamma",
    "beta",
    "gamma",
    "status",
    "canonical_E",
    "canonical_Gamma",
    "state_mismatch",
    "constraint_mismatch",
    "agrees",
];
pub const CLASSIFICATION: &[&str] = &[
    "E",
    "Gamma",
    "label",
    "witness_E",
    "witness_Gamma",
    "max_violation",
];
pub const STABILITY: &[&str] = &[
    "E",
    "Gamma",
    "status",
    "n1",
    "n2",
    "beta",
    "gamma",
    "mu_full",
    "mu_tangent",
    "nu",
    "lambda_min",
    "dqdpsi_min",
    "dqdpsi_max",
    "theta",
    "sigma",
    "tau",
    "penalized_min",
    "rayleigh_ok",
    "arnold2_ok",
    "canonical_nondegenerate",
    "microcanonical_nondegenerate",
    "lyapunov_penalized_ok",
];
pub const PRIOR: &[&str] = &["y", "density"];
pub const TOPOGRAPHY: &[&str] = &["x1", "x2", "b"];

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Input(e.to_string()))?;
    w.write_record(header)?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        w.write_record(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Rows of a CSV whose header must equal `header` exactly.
pub fn read_table(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(CliError::Input(format!("{} is empty", path.display())));
    }
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(CliError::Input(format!(
            "{}: schema mismatch, expected columns {} but found {}",
            path.display(),
            header.join(","),
            found.join(",")
        )));
    }
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    if rows.is_empty() {
        return Err(CliError::Input(format!(
            "{} has no data rows",
            path.display()
        )));
    }
    Ok(rows)
}

pub fn parse_f64(cell: &str, path: &Path, line: usize) -> Result<f64, CliError> {
    cell.parse().map_err(|_| {
        CliError::Input(format!(
            "{}: row {line}: `{cell}` is not a number",
            path.display()
        ))
    })
}

pub fn parse_opt(cell: &str, path: &Path, line: usize) -> Result<Option<f64>, CliError> {
    if cell.is_empty() {
        Ok(None)
    } else {
        parse_f64(cell, path, line).map(Some)
    }
}

fn parse_bool(cell: &str, path: &Path, line: usize) -> Result<bool, CliError> {
    cell.parse().map_err(|_| {
        CliError::Input(format!(
            "{}: row {line}: `{cell}` is not a boolean",
            path.display()
        ))
    })
}

/// Surface CSV row with its stored label.
pub struct SurfaceRow {
    pub point: SurfacePoint,
    pub label: String,
}

pub fn read_surface_rows(path: &Path) -> Result<Vec<SurfaceRow>, CliError> {
    read_table(path, SURFACE)?
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            let line = k + 2;
            Ok(SurfaceRow {
                point: SurfacePoint {
                    energy: parse_f64(&r[0], path, line)?,
                    circulation: parse_f64(&r[1], path, line)?,
                    admissible: parse_bool(&r[2], path, line)?,
                    converged: parse_bool(&r[3], path, line)?,
                    nonunique: false,
                    entropy: parse_opt(&r[4], path, line)?,
                    beta: parse_opt(&r[5], path, line)?,
                    gamma: parse_opt(&r[6], path, line)?,
                    iterations: 0,
                },
                label: r[7].clone(),
            })
        })
        .collect()
}

/// Rebuilds a surface from its CSV; rows must be ordered by energy, then circulation.
pub fn read_surface(path: &Path) -> Result<EntropySurface, CliError> {
    let rows = read_surface_rows(path)?;
    let mut energies: Vec<f64> = Vec::new();
    let mut circulations: Vec<f64> = Vec::new();
    for r in &rows {
        if energies.last() != Some(&r.point.energy) {
            energies.push(r.point.energy);
        }
        if energies.len() == 1 {
            circulations.push(r.point.circulation);
        }
    }
    let ng = circulations.len();
    for (k, r) in rows.iter().enumerate() {
        if r.point.energy != energies[k / ng] || r.point.circulation != circulations[k % ng] {
            return Err(CliError::Input(format!(
                "{}: row {} breaks the energy-major grid order",
                path.display(),
                k + 2
            )));
        }
    }
    let points = rows.into_iter().map(|r| r.point).collect();
    Ok(EntropySurface::from_points(energies, circulations, points)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1 + 0.2, -1e-300, 12345.678, 0.0025] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(opt(None), "");
    }
}
