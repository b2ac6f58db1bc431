//! Agent models for both training frameworks.
//!
//! Agents are homogeneous and share parameters: one GRU core (hidden 64)
//! steps all agents as a batch, fed with [own observation ++ aggregated
//! message]. The policy head emits action logits; the utility head emits
//! per-action values mixed by the monotonic hypernetwork. All comm networks
//! live in the same store as the nets they feed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comm::{BitMask, CommConfig, CommMode, CommNet, CommNoise, CommOutput};
use crate::nn::checkpoint;
use crate::nn::graph::{NodeId, Tape};
use crate::nn::layers::{GruCell, Linear, Mlp2};
use crate::nn::mixer::MonotonicMixer;
use crate::nn::params::{ParamStore, TapeParams};
use crate::rng::{Pcg, RunRng, Stream};
use crate::traffic::MapSpec;
use crate::Result;

pub const NUM_ACTIONS: usize = 2;
pub const RNN_HIDDEN: usize = 64;
pub const CRITIC_HIDDEN: usize = 32;
pub const MIXER_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Mappo,
    Qmix,
}

impl std::fmt::Display for Framework {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Framework::Mappo => write!(f, "mappo"),
            Framework::Qmix => write!(f, "qmix"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentModel {
    pub framework: Framework,
    pub comm_mode: CommMode,
    pub comm_cfg: CommConfig,
    pub embed_dim: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub num_agents: usize,

    pub actor_store: ParamStore,
    pub critic_store: Option<ParamStore>,

    pub comm: Option<CommNet>,
    pub gru: GruCell,
    pub head: Linear,
    pub critic: Option<Mlp2>,
    pub mixer: Option<MonotonicMixer>,
}

impl AgentModel {
    pub fn new(
        framework: Framework,
        spec: &MapSpec,
        comm_mode: CommMode,
        comm_cfg: CommConfig,
        embed_dim: usize,
        seed: u64,
    ) -> Self {
        let obs_dim = spec.obs_dim();
        let state_dim = spec.global_state_dim();
        let n = spec.num_agents;
        let mut rng = RunRng::new(seed).derive(Stream::Init, 0);

        let mut actor_store = ParamStore::new();
        let comm = match comm_mode {
            CommMode::None => None,
            _ => Some(CommNet::new(
                &mut actor_store,
                "comm",
                obs_dim,
                embed_dim,
                comm_cfg.bits_per_message,
                n,
                &mut rng,
            )),
        };
        let gru = GruCell::new(&mut actor_store, "core", obs_dim + embed_dim, RNN_HIDDEN, &mut rng);
        let head = Linear::new(&mut actor_store, "head", RNN_HIDDEN, NUM_ACTIONS, &mut rng);

        let (critic_store, critic, mixer) = match framework {
            Framework::Mappo => {
                let mut cs = ParamStore::new();
                let critic = Mlp2::new(&mut cs, "critic", state_dim, CRITIC_HIDDEN, 1, &mut rng);
                cs.declare_input("global_state", state_dim);
                cs.declare_output("value", 1);
                (Some(cs), Some(critic), None)
            }
            Framework::Qmix => {
                let mixer = MonotonicMixer::new(&mut actor_store, "mixer", n, state_dim, MIXER_HIDDEN, &mut rng);
                (None, None, Some(mixer))
            }
        };
        actor_store.declare_input("observations", n * obs_dim);
        actor_store.declare_output("head", n * NUM_ACTIONS);

        AgentModel {
            framework,
            comm_mode,
            comm_cfg,
            embed_dim,
            obs_dim,
            state_dim,
            num_agents: n,
            actor_store,
            critic_store,
            comm,
            gru,
            head,
            critic,
            mixer,
        }
    }

    /// Communication forward honoring the comm mode. `eval` controls
    /// deterministic edges/messages; `noise` is required for the learned
    /// layer in training mode.
    pub fn comm_forward(
        &self,
        t: &mut Tape,
        p: &TapeParams,
        obs: NodeId,
        alive: &[bool],
        eval: bool,
        noise: Option<&CommNoise>,
        mask: Option<&BitMask>,
    ) -> Result<CommOutput> {
        let n = self.num_agents;
        let cfg = CommConfig {
            eval_mode: eval,
            ..self.comm_cfg
        };
        match (&self.comm, self.comm_mode) {
            (None, _) | (_, CommMode::None) => {
                let messages = t.constant(n, self.embed_dim, vec![0.0; n * self.embed_dim]);
                let sib = t.constant_scalar(0.0);
                let xib = t.constant_scalar(0.0);
                Ok(CommOutput {
                    messages,
                    sib,
                    xib,
                    rounds: Vec::new(),
                    ledger: crate::comm::KlLedger::new(n, cfg.bits_per_message),
                })
            }
            (Some(net), CommMode::Full) => net.communicate_complete(t, p, obs, alive, &cfg, mask),
            (Some(net), CommMode::Cgibnet) => net.communicate(t, p, obs, alive, &cfg, noise, mask),
        }
    }

    /// One recurrent step for all agents: returns (head outputs [N x A],
    /// next hidden [N x H]).
    pub fn core_step(
        &self,
        t: &mut Tape,
        p: &TapeParams,
        obs: NodeId,
        messages: NodeId,
        hidden: NodeId,
    ) -> (NodeId, NodeId) {
        let x = t.concat_cols(&[obs, messages]);
        let h = self.gru.step(t, p, x, hidden);
        let out = self.head.forward(t, p, h);
        (out, h)
    }

    /// Central value estimate for one state row [1 x S].
    pub fn critic_value(&self, t: &mut Tape, p: &TapeParams, state: NodeId) -> NodeId {
        self.critic
            .as_ref()
            .expect("critic_value on a model without a critic")
            .forward(t, p, state)
    }

    pub fn zero_hidden(&self, t: &mut Tape) -> NodeId {
        t.constant(self.num_agents, RNN_HIDDEN, vec![0.0; self.num_agents * RNN_HIDDEN])
    }

    /// Softmax-sample actions for alive agents from logits; dead agents act 0.
    pub fn sample_actions(
        &self,
        logits: &[f64],
        alive: &[bool],
        rng: &mut Pcg,
    ) -> (Vec<usize>, Vec<f64>) {
        let mut actions = vec![0usize; self.num_agents];
        let mut log_probs = vec![0.0; self.num_agents];
        for i in 0..self.num_agents {
            if !alive[i] {
                continue;
            }
            let row = &logits[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&l| (l - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
            let a = rng.categorical(&probs);
            actions[i] = a;
            log_probs[i] = probs[a].ln();
        }
        (actions, log_probs)
    }

    /// Greedy actions (argmax of logits or utilities).
    pub fn greedy_actions(&self, outputs: &[f64], alive: &[bool]) -> Vec<usize> {
        (0..self.num_agents)
            .map(|i| {
                if !alive[i] {
                    return 0;
                }
                let row = &outputs[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(idx, _)| idx)
                    .unwrap()
            })
            .collect()
    }

    /// Epsilon-greedy over per-action utilities.
    pub fn eps_greedy_actions(
        &self,
        qvals: &[f64],
        alive: &[bool],
        eps: f64,
        rng: &mut Pcg,
    ) -> Vec<usize> {
        let greedy = self.greedy_actions(qvals, alive);
        (0..self.num_agents)
            .map(|i| {
                if alive[i] && rng.uniform() < eps {
                    rng.below(NUM_ACTIONS)
                } else {
                    greedy[i]
                }
            })
            .collect()
    }

    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        let mut stores: Vec<(&str, &ParamStore)> = vec![("actor", &self.actor_store)];
        if let Some(cs) = &self.critic_store {
            stores.push(("critic", cs));
        }
        checkpoint::save(dir, seed, &stores)
    }

    pub fn load(&mut self, dir: &Path) -> Result<()> {
        checkpoint::load(dir, "actor", &mut self.actor_store)?;
        if let Some(cs) = &mut self.critic_store {
            checkpoint::load(dir, "critic", cs)?;
        }
        Ok(())
    }
}
