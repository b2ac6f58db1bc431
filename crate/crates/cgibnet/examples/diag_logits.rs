use cgibnet::comm::{sampling::ReparamVariant, CommConfig, CommMode};
use cgibnet::nn::Tape;
use cgibnet::traffic::{MapName, MapSpec, TrafficEnv};
use cgibnet::train::{MappoCfg, MappoTrainer};

fn main() {
    let mode = match std::env::args().nth(1).as_deref() {
        Some("none") => CommMode::None,
        Some("cgibnet") => CommMode::Cgibnet,
        _ => CommMode::Full,
    };
    let cfg = MappoCfg {
        map: MapName::Easy,
        comm_mode: mode,
        comm: CommConfig {
            num_agents: 4, bits_per_message: 5, rounds: 1, temperature: 1.0,
            beta_s: 0.1, beta_x: 0.001, eval_mode: false,
            reparam: ReparamVariant::Conventional,
        },
        embed_dim: 32, gamma: 0.99, gae_lambda: 0.95, epsilon_clip: 0.2,
        lr_actor: 1e-3, lr_critic: 3e-3, entropy_coef: 0.01, value_coef: 0.5,
        batch_steps: 500, iterations: 1, ppo_epochs: 1, max_grad_norm: 10.0,
        eval_interval: 100000, eval_episodes: 2, seed: 0, workers: 2,
    };
    let mut tr = MappoTrainer::new(cfg);
    let spec = MapSpec::builtin(MapName::Easy);
    let probe_logits = |tr: &MappoTrainer| -> (f64, bool) {
        let mut env = TrafficEnv::new(spec.clone());
        let step0 = env.reset(42);
        let mut t = Tape::new();
        let p = tr.model.actor_store.bind_frozen(&mut t);
        let obs_flat: Vec<f64> = step0.observations.iter().flatten().cloned().collect();
        let obs = t.constant(4, tr.model.obs_dim, obs_flat);
        let comm = tr.model.comm_forward(&mut t, &p, obs, &step0.alive_mask, true, None, None).unwrap();
        let h = tr.model.zero_hidden(&mut t);
        let (out, _) = tr.model.core_step(&mut t, &p, obs, comm.messages, h);
        let vals = t.value(out);
        let mx = vals.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        let bad = vals.iter().any(|v| !v.is_finite());
        (mx, bad)
    };
    for i in 0..40 {
        tr.train_iteration().unwrap();
        if i % 5 == 4 {
            let (mx, bad) = probe_logits(&tr);
            // also actor param max
            let pmax = tr.model.actor_store.data().iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
            println!("iter {:2}: max|logit| {mx:12.3} nonfinite {bad}  max|param| {pmax:10.3}", i + 1);
        }
    }
}
