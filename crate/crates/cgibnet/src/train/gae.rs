//! Generalized advantage estimation over completed episodes.

use crate::{CgibError, Result};

use super::Trajectory;

/// Per-step, per-agent advantage estimates. Episodes here always terminate,
/// so the bootstrap value beyond the final step is zero. The shared reward
/// and central value function give every agent the same estimate at a step;
/// the per-agent replication is what downstream masking consumes.
pub fn compute_advantages(traj: &Trajectory, gamma: f64, lambda: f64) -> Result<Vec<Vec<f64>>> {
    let values = traj
        .values
        .as_ref()
        .ok_or_else(|| CgibError::usage("compute_advantages without value estimates"))?;
    let t_len = traj.rewards.len();
    if values.len() != t_len {
        return Err(CgibError::usage("value/reward length mismatch"));
    }
    let n = traj.num_agents;
    let mut adv = vec![0.0; t_len];
    let mut running = 0.0;
    for t in (0..t_len).rev() {
        let next_v = if t + 1 < t_len { values[t + 1] } else { 0.0 };
        let delta = traj.rewards[t] + gamma * next_v - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    Ok(adv.iter().map(|&a| vec![a; n]).collect())
}

/// Standardize advantages to zero mean / unit variance over the alive
/// (step, agent) entries of a batch, in place.
pub fn normalize_advantages(batch: &mut [(Vec<Vec<f64>>, &Trajectory)]) {
    let mut count = 0usize;
    let mut mean = 0.0;
    for (adv, traj) in batch.iter() {
        for (t, row) in adv.iter().enumerate() {
            for (i, &a) in row.iter().enumerate() {
                if traj.alive[t][i] {
                    mean += a;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return;
    }
    mean /= count as f64;
    let mut var = 0.0;
    for (adv, traj) in batch.iter() {
        for (t, row) in adv.iter().enumerate() {
            for (i, &a) in row.iter().enumerate() {
                if traj.alive[t][i] {
                    var += (a - mean) * (a - mean);
                }
            }
        }
    }
    let std = (var / count as f64).sqrt().max(1e-8);
    for (adv, _) in batch.iter_mut() {
        for row in adv.iter_mut() {
            for a in row.iter_mut() {
                *a = (*a - mean) / std;
            }
        }
    }
}
