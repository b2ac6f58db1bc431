//! Episode collection with communication in the agent forward path.

use crate::bandwidth::TraceStats;
use crate::comm::{BitMask, CommMode, CommNoise, KlLedger};
use crate::nn::graph::Tape;
use crate::rng::{RunRng, Stream};
use crate::traffic::{EpisodeMetrics, MapSpec, TrafficEnv};
use crate::train::model::{AgentModel, Framework, NUM_ACTIONS};
use crate::Result;

use super::Trajectory;

#[derive(Debug, Clone, Copy)]
pub enum ActionSelect {
    /// Sample from the policy distribution (policy-based rollouts).
    PolicySample,
    /// Argmax of the head outputs (deterministic evaluation).
    Greedy,
    /// Epsilon-greedy over utilities (value-based rollouts).
    EpsGreedy(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct CollectOptions<'a> {
    /// Deterministic communication (hard edges, mean messages).
    pub eval_comm: bool,
    pub select: ActionSelect,
    pub mask: Option<&'a BitMask>,
    /// Keep per-step round states + ledgers for bandwidth accounting.
    pub record_trace: bool,
    /// Seed stream separating training rollouts from evaluation batteries.
    pub stream: Stream,
    /// Critic denormalization (mean, std) when value estimates are recorded.
    pub value_scale: (f64, f64),
}

impl<'a> CollectOptions<'a> {
    pub fn training_sample() -> Self {
        CollectOptions {
            eval_comm: false,
            select: ActionSelect::PolicySample,
            mask: None,
            record_trace: false,
            stream: Stream::Rollout,
            value_scale: (0.0, 1.0),
        }
    }

    pub fn with_value_scale(mut self, mean: f64, std: f64) -> Self {
        self.value_scale = (mean, std);
        self
    }

    pub fn training_eps_greedy(eps: f64) -> Self {
        CollectOptions {
            select: ActionSelect::EpsGreedy(eps),
            ..Self::training_sample()
        }
    }

    pub fn evaluation(mask: Option<&'a BitMask>) -> Self {
        CollectOptions {
            eval_comm: true,
            select: ActionSelect::Greedy,
            mask,
            record_trace: true,
            stream: Stream::Eval,
            value_scale: (0.0, 1.0),
        }
    }
}

pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    pub metrics: EpisodeMetrics,
    /// Per step: every communication round's state and this step's ledger.
    pub trace: Option<Vec<(Vec<crate::comm::CommRoundState>, KlLedger)>>,
}

/// Roll out one complete episode. Fully determined by
/// (model parameters, map, run seed, episode index, options).
pub fn collect_episode(
    model: &AgentModel,
    spec: &MapSpec,
    run_seed: u64,
    episode_idx: u64,
    opts: &CollectOptions,
) -> Result<EpisodeOutcome> {
    let root = RunRng::new(run_seed);
    let mut env_rng = root.derive(opts.stream, episode_idx);
    let env_seed = (env_rng.uniform() * u32::MAX as f64) as u64 ^ (episode_idx << 32);
    let mut action_rng = root.derive(
        match opts.stream {
            Stream::Eval => Stream::Eval,
            _ => Stream::Rollout,
        },
        episode_idx ^ 0x5151_5151,
    );
    let mut noise_rng = root.derive(Stream::CommNoise, episode_idx);

    let n = model.num_agents;
    let mut env = TrafficEnv::new(spec.clone());
    let mut prev = env.reset(env_seed);

    // one tape per episode: parameters bound once, hidden state carried as a node
    let mut t = Tape::new();
    let p = model.actor_store.bind_frozen(&mut t);
    let cp = model.critic_store.as_ref().map(|cs| cs.bind_frozen(&mut t));
    let mut hidden = model.zero_hidden(&mut t);

    let mut traj = Trajectory {
        num_agents: n,
        observations: Vec::new(),
        global_states: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        alive: Vec::new(),
        done: false,
        log_probs: matches!(model.framework, Framework::Mappo).then(Vec::new),
        values: matches!(model.framework, Framework::Mappo).then(Vec::new),
        chosen_q: matches!(model.framework, Framework::Qmix).then(Vec::new),
        comm_noise: Vec::new(),
        sib: Vec::new(),
        xib: Vec::new(),
        final_observations: Vec::new(),
        final_global_state: Vec::new(),
        final_alive: Vec::new(),
    };
    let mut trace = opts.record_trace.then(Vec::new);

    while !prev.done {
        let obs_flat: Vec<f64> = prev.observations.iter().flatten().cloned().collect();
        let obs = t.constant(n, model.obs_dim, obs_flat.clone());

        let needs_noise = !opts.eval_comm && model.comm_mode == CommMode::Cgibnet;
        let noise = needs_noise.then(|| {
            CommNoise::draw(
                &mut noise_rng,
                n,
                model.comm_cfg.bits_per_message,
                model.comm_cfg.rounds,
            )
        });
        let comm = model.comm_forward(
            &mut t,
            &p,
            obs,
            &prev.alive_mask,
            opts.eval_comm,
            noise.as_ref(),
            opts.mask,
        )?;

        let (out, h_next) = model.core_step(&mut t, &p, obs, comm.messages, hidden);
        let out_vals = t.value(out).to_vec();
        hidden = h_next;

        let (actions, log_probs) = match opts.select {
            ActionSelect::PolicySample => model.sample_actions(&out_vals, &prev.alive_mask, &mut action_rng),
            ActionSelect::Greedy => (model.greedy_actions(&out_vals, &prev.alive_mask), vec![0.0; n]),
            ActionSelect::EpsGreedy(eps) => (
                model.eps_greedy_actions(&out_vals, &prev.alive_mask, eps, &mut action_rng),
                vec![0.0; n],
            ),
        };

        if let Some(values) = traj.values.as_mut() {
            let state = t.constant(1, model.state_dim, prev.global_state.clone());
            let v = model.critic_value(&mut t, cp.as_ref().unwrap(), state);
            values.push(t.scalar(v) * opts.value_scale.1 + opts.value_scale.0);
        }
        if let Some(qs) = traj.chosen_q.as_mut() {
            qs.push(
                (0..n)
                    .map(|i| out_vals[i * NUM_ACTIONS + actions[i]])
                    .collect(),
            );
        }
        if let Some(lp) = traj.log_probs.as_mut() {
            lp.push(log_probs);
        }
        if let Some(trace) = trace.as_mut() {
            trace.push((comm.rounds.clone(), comm.ledger.clone()));
        }

        traj.observations.push(obs_flat);
        traj.global_states.push(prev.global_state.clone());
        traj.alive.push(prev.alive_mask.clone());
        traj.actions.push(actions.clone());
        traj.sib.push(t.scalar(comm.sib));
        traj.xib.push(t.scalar(comm.xib));
        traj.comm_noise.push(noise.unwrap_or(CommNoise {
            edge_logistic: Vec::new(),
            node_eps: Vec::new(),
        }));

        let next = env.step(&actions)?;
        traj.rewards.push(next.shared_reward);
        prev = next;
    }

    traj.done = true;
    traj.final_observations = prev.observations.iter().flatten().cloned().collect();
    traj.final_global_state = prev.global_state.clone();
    traj.final_alive = prev.alive_mask.clone();
    traj.check()?;
    let metrics = env.episode_metrics()?;
    Ok(EpisodeOutcome {
        trajectory: traj,
        metrics,
        trace,
    })
}

/// Fold an eval-trace into bandwidth statistics.
pub fn absorb_trace(stats: &mut TraceStats, trace: &[(Vec<crate::comm::CommRoundState>, KlLedger)]) {
    for (rounds, ledger) in trace {
        stats.absorb_step(rounds, ledger);
    }
}
