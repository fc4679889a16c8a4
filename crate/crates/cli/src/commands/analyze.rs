use irstd_core::complexity::{count_model, CostReport};
use irstd_core::detector::build_model;

use super::write_file;
use crate::config::RunConfig;
use crate::error::Result;

pub const COST_TABLE: &str = "cost.txt";
pub const COST_CSV: &str = "cost.csv";

/// Per-layer parameter and operation counts of the configured model at its
/// input size.
pub fn analyze(cfg: &RunConfig) -> Result<CostReport> {
    let (model, _) = build_model(&cfg.model.to_config(), cfg.seed)?;
    let report = count_model(&model)?;
    cfg.freeze()?;
    write_file(&cfg.out.join(COST_TABLE), report.to_table())?;
    write_file(&cfg.out.join(COST_CSV), report.to_csv())?;
    log::info!(
        "{}×{} input: {} parameters, {:.4e} operations",
        cfg.model.input_size,
        cfg.model.input_size,
        report.total_params,
        report.total_flops as f64
    );
    Ok(report)
}
