//! Training: a policy-based loop (clipped-surrogate actors with a central
//! critic) and a value-based loop (monotonic value decomposition with target
//! networks), both consuming the communication layer and adding the weighted
//! structural/node KL terms to their task loss.

pub mod evalrun;
pub mod gae;
pub mod mappo;
pub mod model;
pub mod optim;
pub mod qmix;
pub mod rollout;

pub use evalrun::{evaluate, EvalReport};
pub use gae::{compute_advantages, normalize_advantages};
pub use mappo::{mappo_loss, MappoCfg, MappoTrainer};
pub use model::{AgentModel, Framework};
pub use qmix::{qmix_loss, QmixCfg, QmixTrainer};

use serde::{Deserialize, Serialize};

use crate::comm::CommNoise;

/// One completed episode, everything both trainers need to replay it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub num_agents: usize,
    /// Per step: concatenated per-agent observations [N * obs_dim].
    pub observations: Vec<Vec<f64>>,
    pub global_states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    /// Alive mask at decision time.
    pub alive: Vec<Vec<bool>>,
    pub done: bool,
    /// Behavior-policy log probabilities of the chosen actions.
    pub log_probs: Option<Vec<Vec<f64>>>,
    /// Central value estimates at collection time.
    pub values: Option<Vec<f64>>,
    /// Chosen per-agent utilities at collection time (diagnostics).
    pub chosen_q: Option<Vec<Vec<f64>>>,
    /// Reparameterization noise per step, replayed during training passes.
    pub comm_noise: Vec<CommNoise>,
    pub sib: Vec<f64>,
    pub xib: Vec<f64>,
    /// Post-episode snapshot (the state the last transition leads into).
    pub final_observations: Vec<f64>,
    pub final_global_state: Vec<f64>,
    pub final_alive: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Every per-step sequence must share one length and rewards stay finite.
    pub fn check(&self) -> crate::Result<()> {
        let t = self.rewards.len();
        let ok = self.observations.len() == t
            && self.global_states.len() == t
            && self.actions.len() == t
            && self.alive.len() == t
            && self.sib.len() == t
            && self.xib.len() == t
            && self.log_probs.as_ref().is_none_or(|v| v.len() == t)
            && self.values.as_ref().is_none_or(|v| v.len() == t)
            && self.chosen_q.as_ref().is_none_or(|v| v.len() == t);
        if !ok {
            return Err(crate::CgibError::usage("trajectory sequences disagree on length"));
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(crate::CgibError::numerical("non-finite reward in trajectory"));
        }
        Ok(())
    }
}

/// Additive loss record: total = task + beta_s * sib + beta_x * xib, exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task_loss: f64,
    pub sib_term: f64,
    pub xib_term: f64,
    pub beta_s: f64,
    pub beta_x: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(task_loss: f64, sib_term: f64, xib_term: f64, beta_s: f64, beta_x: f64) -> Self {
        LossBreakdown {
            task_loss,
            sib_term,
            xib_term,
            beta_s,
            beta_x,
            total: task_loss + beta_s * sib_term + beta_x * xib_term,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// One evaluation record in the metric log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: usize,
    pub env_steps: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub success_rate: f64,
    pub scr: f64,
    pub scr_per_round: Vec<f64>,
    pub sib: f64,
    pub xib: f64,
    pub loss: LossBreakdown,
}

/// Deterministic, order-preserving parallel map. Worker scheduling cannot
/// change results because every item's computation is independent and the
/// output lands at the item's index.
pub fn parallel_map<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync,
{
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let workers = workers.clamp(1, n);
    if workers == 1 {
        return items.into_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let mut slots: Vec<Option<R>> = (0..n).map(|_| None).collect();
    let queue: std::sync::Mutex<Vec<(usize, T)>> =
        std::sync::Mutex::new(items.into_iter().enumerate().rev().collect());
    {
        let slots_ref = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let next = queue.lock().unwrap().pop();
                    match next {
                        Some((i, item)) => {
                            let r = f(i, item);
                            slots_ref.lock().unwrap()[i] = Some(r);
                        }
                        None => break,
                    }
                });
            }
        });
    }
    slots.into_iter().map(|r| r.unwrap()).collect()
}

/// Worker count for data-parallel sections.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_breakdown_is_exactly_additive() {
        let lb = LossBreakdown::compose(1.25, 0.5, 2.0, 0.1, 0.001);
        assert_eq!(lb.total, 1.25 + 0.1 * 0.5 + 0.001 * 2.0);
        let zero = LossBreakdown::compose(3.5, 10.0, 20.0, 0.0, 0.0);
        assert_eq!(zero.total, zero.task_loss);
    }

    #[test]
    fn parallel_map_matches_serial() {
        let items: Vec<u64> = (0..37).collect();
        let serial: Vec<u64> = items.iter().map(|&x| x * x + 1).collect();
        let par = parallel_map(items, 4, |_, x| x * x + 1);
        assert_eq!(par, serial);
    }
}
