use cgibnet::comm::{sampling::ReparamVariant, CommConfig, CommMode};
use cgibnet::traffic::MapName;
use cgibnet::train::rollout::{collect_episode, CollectOptions};
use cgibnet::train::{MappoCfg, MappoTrainer};

fn main() {
    let cfg = MappoCfg {
        map: MapName::Easy,
        comm_mode: CommMode::Full,
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
    let probe = |tr: &MappoTrainer| {
        let g = collect_episode(&tr.model, &tr.spec, 999, 0, &CollectOptions::evaluation(None)).unwrap();
        let s = collect_episode(&tr.model, &tr.spec, 999, 3, &CollectOptions::training_sample()).unwrap();
        (g.trajectory.actions.clone(), g.trajectory.episode_return(), s.trajectory.episode_return())
    };
    let (a0, g0, s0) = probe(&tr);
    let p0 = tr.model.actor_store.data().to_vec();
    let mut sampled_returns = Vec::new();
    for i in 0..100 {
        tr.train_iteration().unwrap();
        if i % 10 == 0 {
            let (_, _, sr) = probe(&tr);
            sampled_returns.push(sr);
        }
    }
    let (a1, g1, s1) = probe(&tr);
    let p1 = tr.model.actor_store.data().to_vec();
    let delta: f64 = p0.iter().zip(&p1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    println!("param delta L2: {delta:.4}");
    println!("greedy return before {g0:.1} after {g1:.1}; sampled before {s0:.1} after {s1:.1}");
    println!("greedy actions changed: {}", a0 != a1);
    println!("sampled returns over training: {:?}", sampled_returns.iter().map(|r| format!("{r:.0}")).collect::<Vec<_>>());
}
