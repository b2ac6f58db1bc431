//! Aggregation of completed runs into table records.
//!
//! One row per run: seed-mean SCR, return at the learned structure, and
//! returns under each bandwidth target; two-round runs also report per-round
//! compression. Sweep extraction turns rows that differ only in one beta
//! into (beta, SCR, return@75%) triples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CgibError, Result};

use super::run::{RunManifest, RunReport, RunStatus};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRecord {
    pub name: String,
    pub framework: String,
    pub map: String,
    pub comm_mode: String,
    pub beta_s: f64,
    pub beta_x: f64,
    pub rounds: usize,
    pub seeds: usize,
    /// Percent, per communication round.
    pub scr_per_round: Vec<f64>,
    pub scr: f64,
    pub r_at_scr: f64,
    /// Returns under the bandwidth battery targets (50/75/100%).
    pub r_at_mcr: Vec<f64>,
}

pub fn load_run(dir: &Path) -> Result<(RunManifest, RunReport)> {
    let manifest: RunManifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
    let report: RunReport = serde_json::from_slice(&std::fs::read(dir.join("report.json"))?)?;
    Ok((manifest, report))
}

pub fn record_from(manifest: &RunManifest, report: &RunReport) -> TableRecord {
    TableRecord {
        name: manifest.name.clone(),
        framework: manifest.config.framework.to_string(),
        map: manifest.config.map.to_string(),
        comm_mode: manifest.config.comm_mode.to_string(),
        beta_s: manifest.config.beta_s,
        beta_x: manifest.config.beta_x,
        rounds: manifest.config.rounds,
        seeds: manifest.seeds.len(),
        scr_per_round: report.mean_scr_per_round.iter().map(|v| v * 100.0).collect(),
        scr: report.mean_scr * 100.0,
        r_at_scr: report.mean_returns.first().copied().unwrap_or(0.0),
        r_at_mcr: report.mean_returns.iter().skip(1).copied().collect(),
    }
}

/// Aggregate completed manifests into table rows. All runs must share one
/// (framework, map) pair; anything else is a usage error.
pub fn aggregate(runs: &[(RunManifest, RunReport)]) -> Result<Vec<TableRecord>> {
    if runs.is_empty() {
        return Err(CgibError::usage("aggregate needs at least one completed manifest"));
    }
    for (m, _) in runs {
        if m.status != RunStatus::Complete {
            return Err(CgibError::usage(format!("run '{}' is not complete", m.name)));
        }
    }
    let key = (runs[0].0.config.framework, runs[0].0.config.map);
    if runs.iter().any(|(m, _)| (m.config.framework, m.config.map) != key) {
        return Err(CgibError::usage(
            "aggregate mixes incompatible configs (framework/map differ)",
        ));
    }
    Ok(runs.iter().map(|(m, r)| record_from(m, r)).collect())
}

/// (beta_s, SCR%, return@MCR=75%) triples from a structural sweep.
pub fn beta_s_sweep(records: &[TableRecord]) -> Vec<(f64, f64, f64)> {
    let mut triples: Vec<(f64, f64, f64)> = records
        .iter()
        .map(|r| (r.beta_s, r.scr, r.r_at_mcr.get(1).copied().unwrap_or(0.0)))
        .collect();
    triples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    triples
}

/// Fixed-width text rendering of the table rows.
pub fn render_table(records: &[TableRecord]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>7} {:>8} {:>9} {:>9} {:>9} {:>9}\n",
        "run", "scr%", "r@scr", "r@mcr50", "r@mcr75", "r@mcr100", "seeds"
    ));
    for r in records {
        let scr = if r.scr_per_round.len() > 1 {
            r.scr_per_round
                .iter()
                .map(|v| format!("{v:.0}%"))
                .collect::<Vec<_>>()
                .join("/")
        } else {
            format!("{:.1}", r.scr)
        };
        out.push_str(&format!(
            "{:<28} {:>7} {:>8.1} {:>9.1} {:>9.1} {:>9.1} {:>9}\n",
            r.name,
            scr,
            r.r_at_scr,
            r.r_at_mcr.first().copied().unwrap_or(f64::NAN),
            r.r_at_mcr.get(1).copied().unwrap_or(f64::NAN),
            r.r_at_mcr.get(2).copied().unwrap_or(f64::NAN),
            r.seeds
        ));
    }
    out
}
