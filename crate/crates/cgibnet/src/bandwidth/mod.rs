//! Bandwidth accounting and constrained evaluation.
//!
//! SCR counts pruned directed edges against the complete alive graph; MCR
//! counts removed message bits, where every kept edge costs the sender's
//! unmasked bit count and pruned edges save their full width. Masking plans
//! are built greedily from an ascending importance ranking (per-bit KL or
//! mean absolute activation) over a reference evaluation trace.

pub mod budget;
pub mod confusion;

pub use budget::{build_budget, BitBudget, MaskStrategy, TraceStats};
pub use confusion::confusion_matrix;

use serde::{Deserialize, Serialize};

use crate::{CgibError, Result};

/// SCR = (complete - kept) / complete.
pub fn compute_scr(edges_complete: usize, edges_kept: usize) -> Result<f64> {
    if edges_complete == 0 {
        return Err(CgibError::usage("compute_scr with zero complete edges"));
    }
    if edges_kept > edges_complete {
        return Err(CgibError::usage(format!(
            "compute_scr: kept {edges_kept} exceeds complete {edges_complete}"
        )));
    }
    Ok((edges_complete - edges_kept) as f64 / edges_complete as f64)
}

/// MCR = (complete bits - kept bits) / complete bits.
pub fn compute_mcr(bits_complete: usize, bits_kept: usize) -> Result<f64> {
    if bits_complete == 0 {
        return Err(CgibError::usage("compute_mcr with zero complete bits"));
    }
    if bits_kept > bits_complete {
        return Err(CgibError::usage(format!(
            "compute_mcr: kept {bits_kept} exceeds complete {bits_complete}"
        )));
    }
    Ok((bits_complete - bits_kept) as f64 / bits_complete as f64)
}

/// Achieved bandwidth usage over an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    /// One entry per communication round, each in [0,1].
    pub scr_per_round: Vec<f64>,
    pub mcr: f64,
    pub edges_complete: usize,
    pub edges_kept: usize,
    pub bits_complete: usize,
    pub bits_kept: usize,
}

impl BandwidthReport {
    /// SCR of the last round (the round whose bits MCR counts).
    pub fn scr(&self) -> f64 {
        *self.scr_per_round.last().unwrap_or(&0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scr_worked_example() {
        // 6-edge complete graph pruned to 4: exactly one third compressed
        let v = compute_scr(6, 4).unwrap();
        assert_eq!(v, 2.0 / 6.0);
        assert_eq!(format!("{:.2}%", v * 100.0), "33.33%");
    }

    #[test]
    fn scr_extremes() {
        assert_eq!(compute_scr(6, 6).unwrap(), 0.0);
        assert_eq!(compute_scr(12, 0).unwrap(), 1.0);
        assert!(compute_scr(0, 0).is_err());
    }

    #[test]
    fn mcr_worked_example() {
        let v = compute_mcr(18, 7).unwrap();
        assert_eq!(v, 11.0 / 18.0);
        assert_eq!(format!("{:.2}%", v * 100.0), "61.11%");
    }

    #[test]
    fn mcr_extremes() {
        assert_eq!(compute_mcr(18, 18).unwrap(), 0.0);
        assert_eq!(compute_mcr(20, 5).unwrap(), 0.75);
        assert!(compute_mcr(0, 0).is_err());
    }
}
