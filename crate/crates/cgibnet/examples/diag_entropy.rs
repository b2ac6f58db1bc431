use cgibnet::comm::{sampling::ReparamVariant, CommConfig, CommMode};
use cgibnet::nn::Tape;
use cgibnet::traffic::{CarStatus, MapName, TrafficEnv};
use cgibnet::train::{MappoCfg, MappoTrainer};

fn main() {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let cfg = MappoCfg {
        map: MapName::Easy,
        comm_mode: CommMode::Cgibnet,
        comm: CommConfig {
            num_agents: 4, bits_per_message: 5, rounds: 1, temperature: 1.0,
            beta_s: 0.0, beta_x: 0.0, eval_mode: false,
            reparam: ReparamVariant::Conventional,
        },
        embed_dim: 32, gamma: 0.99, gae_lambda: 0.95, epsilon_clip: 0.2,
        lr_actor: 1e-3, lr_critic: 3e-3, entropy_coef: 0.01, value_coef: 0.5,
        batch_steps: 500, iterations: 1, ppo_epochs: 2, max_grad_norm: 10.0,
        eval_interval: 100000, eval_episodes: 2, seed: 0, workers: 2,
    };
    let mut tr = MappoTrainer::new(cfg);
    for _ in 0..iters {
        tr.train_iteration().unwrap();
    }
    // inspect entropy near the junction vs elsewhere under the greedy policy
    let spec = tr.spec.clone();
    let mut near = (0.0, 0usize);
    let mut far = (0.0, 0usize);
    for seed in 0..30u64 {
        let mut env = TrafficEnv::new(spec.clone());
        let mut step = env.reset(777 + seed);
        let mut t = Tape::new();
        let p = tr.model.actor_store.bind_frozen(&mut t);
        let mut hidden = tr.model.zero_hidden(&mut t);
        while !step.done {
            let obs_flat: Vec<f64> = step.observations.iter().flatten().cloned().collect();
            let obs = t.constant(4, tr.model.obs_dim, obs_flat);
            let comm = tr.model.comm_forward(&mut t, &p, obs, &step.alive_mask, true, None, None).unwrap();
            let (out, h) = tr.model.core_step(&mut t, &p, obs, comm.messages, hidden);
            hidden = h;
            let vals = t.value(out).to_vec();
            let mut actions = vec![0usize; 4];
            for i in 0..4 {
                if step.alive_mask[i] {
                    let l0 = vals[i * 2];
                    let l1 = vals[i * 2 + 1];
                    let m = l0.max(l1);
                    let p0 = (l0 - m).exp() / ((l0 - m).exp() + (l1 - m).exp());
                    let h = -(p0 * p0.ln() + (1.0 - p0) * (1.0 - p0).ln()).max(-1e9);
                    let h = if h.is_finite() { h } else { 0.0 };
                    // distance to the junction (3,2) along the route
                    let cell = env.car_cell(i);
                    let dist = (cell.0 - 3).abs() + (cell.1 - 2).abs();
                    if env.cars()[i].status == CarStatus::Active && dist <= 2 {
                        near.0 += h;
                        near.1 += 1;
                    } else {
                        far.0 += h;
                        far.1 += 1;
                    }
                    actions[i] = if vals[i * 2] >= vals[i * 2 + 1] { 0 } else { 1 };
                }
            }
            step = env.step(&actions).unwrap();
        }
    }
    println!(
        "entropy near junction: {:.4} ({} samples)   far: {:.4} ({} samples)   [max ln2 = 0.693]",
        near.0 / near.1 as f64, near.1,
        far.0 / far.1 as f64, far.1
    );
}
