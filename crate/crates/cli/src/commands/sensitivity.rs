use std::fmt::Write as _;

use irstd_core::metrics::iou_sensitivity;

use super::write_file;
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const SENSITIVITY_CSV: &str = "sensitivity.csv";

/// IoU of each square box size against diagonal shifts of itself; one row
/// per size, one column per shift.
pub fn sensitivity(cfg: &RunConfig) -> Result<Vec<(f64, Vec<f64>)>> {
    let s = &cfg.sensitivity;
    if let Some(bad) = s.box_sizes.iter().find(|&&b| !(b >= 1.0 && b.is_finite())) {
        return Err(CliError::Config(format!("box size {bad} must be at least 1")));
    }
    if s.shifts.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Config("shifts must be finite".into()));
    }
    let rows: Vec<(f64, Vec<f64>)> = s
        .box_sizes
        .iter()
        .map(|&b| (b, iou_sensitivity(b, &s.shifts).into_iter().map(|p| p.1).collect()))
        .collect();

    let mut csv = String::from("box_size");
    for d in &s.shifts {
        let _ = write!(csv, ",shift_{d}");
    }
    csv.push('\n');
    for (b, ious) in &rows {
        let _ = write!(csv, "{b}");
        for v in ious {
            let _ = write!(csv, ",{v:.6}");
        }
        csv.push('\n');
    }
    cfg.freeze()?;
    write_file(&cfg.out.join(SENSITIVITY_CSV), &csv)?;
    print!("{csv}");
    Ok(rows)
}
