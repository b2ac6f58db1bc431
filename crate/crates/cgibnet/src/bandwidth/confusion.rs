//! Communication confusion matrices: who sent how many live bits to whom.

use serde::Serialize;

use crate::comm::{BitMask, CommRoundState};

/// Entry (receiver, sender) = unmasked bits transmitted from sender to
/// receiver at the inspected step, counted on the final round. Diagonal is
/// zero (no self-edges).
pub fn confusion_matrix(last_round: &CommRoundState, mask: &BitMask) -> Vec<Vec<u32>> {
    let n = last_round.alive.len();
    let mut m = vec![vec![0u32; n]; n];
    for &(sender, receiver) in &last_round.kept_edges {
        m[receiver][sender] = mask.kept_bits(sender) as u32;
    }
    m
}

#[derive(Debug, Serialize)]
pub struct ConfusionDump {
    pub timestep: usize,
    /// matrix[receiver][sender] = live bits.
    pub matrix: Vec<Vec<u32>>,
}
