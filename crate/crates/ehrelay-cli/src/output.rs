//! Artifact writing: locale-free CSV values at 12 significant digits and
//! the JSON header line that carries the effective seed of each artifact.

use std::path::Path;

use ndarray::Array2;
use serde_json::json;

use crate::CliError;

/// Formats a value with 12 significant digits, '.' decimal point, no
/// locale. Non-finite values print as `inf`/`-inf`/`nan`, which Rust's
/// float parser round-trips.
pub fn fmt_g12(value: f64) -> String {
    if value == 0.0 {
        "0".to_string()
    } else if value.is_finite() {
        format!("{value:.11e}")
    } else if value.is_nan() {
        "nan".to_string()
    } else if value > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Prints the JSON header of an artifact on stdout: the command, the
/// effective seed, and where the artifact went.
pub fn print_header(command: &str, seed: u64, artifact: Option<&Path>) {
    let header = json!({
        "command": command,
        "seed": seed,
        "artifact": artifact.map(|p| p.display().to_string()),
    });
    println!("{header}");
}

pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record(header)
        .map_err(|e| CliError::Config(format!("csv write failed: {e}")))?;
    for row in rows {
        writer
            .write_record(row)
            .map_err(|e| CliError::Config(format!("csv write failed: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Config(format!("csv flush failed: {e}")))?;
    Ok(())
}

/// Dumps a matrix as CSV, one row per origin state.
pub fn write_matrix_csv(path: &Path, matrix: &Array2<f64>) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = matrix
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| fmt_g12(*v)).collect())
        .collect();
    let header: Vec<String> = (0..matrix.ncols()).map(|j| format!("to_{j}")).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &header_refs, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatted_values_round_trip() {
        for v in [0.0, 1.0, -2.5, 0.3333333333333333, 1e-12, 2.3825] {
            let s = fmt_g12(v);
            let back: f64 = s.parse().unwrap();
            let tol = 1e-11 * v.abs().max(1e-300);
            assert!((back - v).abs() <= tol, "{v} -> {s} -> {back}");
        }
        assert_eq!(fmt_g12(f64::INFINITY), "inf");
        assert!(fmt_g12(f64::INFINITY).parse::<f64>().unwrap().is_infinite());
    }
}
