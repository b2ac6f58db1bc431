//! Run configuration: one hierarchical TOML file per run, every field
//! overridable from the CLI, defaults matching the shipped experiment
//! settings. Precedence: CLI > file > defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comm::{CommConfig, CommMode, ReparamVariant};
use crate::traffic::MapName;
use crate::train::model::Framework;
use crate::train::{MappoCfg, QmixCfg};
use crate::{CgibError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub framework: Framework,
    pub map: MapName,
    pub comm_mode: CommMode,

    // communication layer
    pub beta_s: f64,
    pub beta_x: f64,
    pub tau: f64,
    pub bits_per_message: usize,
    pub rounds: usize,
    pub embed_dim: usize,
    pub reparam: ReparamVariant,

    // shared optimization
    pub gamma: f64,
    pub max_grad_norm: f64,
    pub seeds: Vec<u64>,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub final_eval_episodes: usize,

    // policy-based loop
    pub epsilon_clip: f64,
    pub gae_lambda: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub batch_steps: usize,
    /// Per-map defaults applied when zero: 3000/3000/10000.
    pub iterations: usize,
    pub ppo_epochs: usize,

    // value-based loop
    pub lr_qmix: f64,
    pub qmix_reward_scale: f64,
    pub batch_episodes: usize,
    /// Episode budget for the value-based loop.
    pub episodes: usize,
    pub replay_capacity: usize,
    pub target_refresh: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_anneal_frac: f64,

    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            framework: Framework::Mappo,
            map: MapName::Easy,
            comm_mode: CommMode::Cgibnet,
            beta_s: 0.1,
            beta_x: 0.001,
            tau: 1.0,
            bits_per_message: 5,
            rounds: 1,
            embed_dim: 32,
            reparam: ReparamVariant::Conventional,
            gamma: 0.99,
            max_grad_norm: 10.0,
            seeds: vec![0, 1, 2, 3, 4],
            eval_interval: 100,
            eval_episodes: 20,
            final_eval_episodes: 100,
            epsilon_clip: 0.2,
            gae_lambda: 0.95,
            lr_actor: 1e-3,
            lr_critic: 3e-3,
            entropy_coef: 0.01,
            value_coef: 0.5,
            batch_steps: 500,
            iterations: 0,
            ppo_epochs: 2,
            lr_qmix: 1e-3,
            qmix_reward_scale: 0.02,
            batch_episodes: 64,
            episodes: 3000,
            replay_capacity: 5000,
            target_refresh: 200,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_anneal_frac: 0.2,
            workers: 0,
        }
    }
}

/// Sweep grids used by the hyperparameter studies.
pub const BETA_S_GRID: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];
pub const BETA_X_GRID: [f64; 4] = [0.0005, 0.001, 0.005, 0.01];
/// Bandwidth battery targets applied to every final checkpoint.
pub const MCR_BATTERY: [f64; 3] = [0.5, 0.75, 1.0];

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CgibError::InvalidConfig(vec![format!("{path:?}: {e}")]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolved_iterations(&self) -> usize {
        if self.iterations != 0 {
            return self.iterations;
        }
        match self.map {
            MapName::Easy | MapName::Medium => 3000,
            MapName::Hard => 10000,
        }
    }

    pub fn resolved_workers(&self) -> usize {
        if self.workers != 0 {
            self.workers
        } else {
            crate::train::default_workers()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.beta_s < 0.0 {
            bad.push("beta_s must be >= 0".into());
        }
        if self.beta_x < 0.0 {
            bad.push("beta_x must be >= 0".into());
        }
        if self.tau <= 0.0 {
            bad.push("tau must be > 0".into());
        }
        if self.bits_per_message < 1 {
            bad.push("bits_per_message must be >= 1".into());
        }
        if !(1..=2).contains(&self.rounds) {
            bad.push("rounds must be 1 or 2".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            bad.push("gamma must be in [0,1)".into());
        }
        if self.epsilon_clip <= 0.0 {
            bad.push("epsilon_clip must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            bad.push("gae_lambda must be in [0,1]".into());
        }
        if self.seeds.is_empty() {
            bad.push("seeds must not be empty".into());
        }
        if self.batch_steps == 0 {
            bad.push("batch_steps must be > 0".into());
        }
        if self.eval_interval == 0 {
            bad.push("eval_interval must be > 0".into());
        }
        if self.eval_episodes == 0 || self.final_eval_episodes == 0 {
            bad.push("eval episode counts must be > 0".into());
        }
        if self.batch_episodes == 0 || self.replay_capacity < self.batch_episodes {
            bad.push("replay_capacity must hold at least one batch".into());
        }
        if !(0.0..=1.0).contains(&self.eps_end) || !(0.0..=1.0).contains(&self.eps_start) {
            bad.push("exploration range must lie in [0,1]".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CgibError::InvalidConfig(bad))
        }
    }

    pub fn comm_config(&self) -> CommConfig {
        CommConfig {
            num_agents: crate::traffic::MapSpec::builtin(self.map).num_agents,
            bits_per_message: self.bits_per_message,
            rounds: self.rounds,
            temperature: self.tau,
            beta_s: self.beta_s,
            beta_x: self.beta_x,
            eval_mode: false,
            reparam: self.reparam,
        }
    }

    pub fn mappo_cfg(&self, seed: u64) -> MappoCfg {
        MappoCfg {
            map: self.map,
            comm_mode: self.comm_mode,
            comm: self.comm_config(),
            embed_dim: self.embed_dim,
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            epsilon_clip: self.epsilon_clip,
            lr_actor: self.lr_actor,
            lr_critic: self.lr_critic,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            batch_steps: self.batch_steps,
            iterations: self.resolved_iterations(),
            ppo_epochs: self.ppo_epochs,
            max_grad_norm: self.max_grad_norm,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
            seed,
            workers: self.resolved_workers(),
        }
    }

    pub fn qmix_cfg(&self, seed: u64) -> QmixCfg {
        QmixCfg {
            map: self.map,
            comm_mode: self.comm_mode,
            comm: self.comm_config(),
            embed_dim: self.embed_dim,
            gamma: self.gamma,
            lr: self.lr_qmix,
            reward_scale: self.qmix_reward_scale,
            batch_episodes: self.batch_episodes,
            episodes: self.episodes,
            replay_capacity: self.replay_capacity,
            target_refresh: self.target_refresh,
            eps_start: self.eps_start,
            eps_end: self.eps_end,
            eps_anneal_frac: self.eps_anneal_frac,
            max_grad_norm: self.max_grad_norm,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
            seed,
            workers: self.resolved_workers(),
        }
    }

    /// Stable hash of the serialized config (manifest identity).
    pub fn config_hash(&self) -> String {
        let text = self.to_toml();
        // FNV-1a, enough for artifact naming
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}
