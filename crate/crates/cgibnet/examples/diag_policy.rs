use cgibnet::comm::{sampling::ReparamVariant, CommConfig, CommMode};
use cgibnet::traffic::MapName;
use cgibnet::train::rollout::{collect_episode, CollectOptions};
use cgibnet::train::{MappoCfg, MappoTrainer};

fn main() {
    let mode = match std::env::args().nth(1).as_deref() {
        Some("none") => CommMode::None,
        Some("full") => CommMode::Full,
        _ => CommMode::Cgibnet,
    };
    let iters: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(60);
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
        eval_interval: 10000, eval_episodes: 2, seed: 0, workers: 2,
    };
    let mut tr = MappoTrainer::new(cfg);
    for it in 0..iters {
        tr.train_iteration().unwrap();
        if (it + 1) % 10 == 0 {
            // training-policy action stats on a fresh sampled episode
            let out = collect_episode(&tr.model, &tr.spec, 555, it as u64, &CollectOptions::training_sample()).unwrap();
            let tmoves: usize = out.trajectory.actions.iter().flatten().filter(|&&a| a == 1).count();
            let ttot: usize = out.trajectory.actions.iter().map(|v| v.len()).sum();
            let geval = collect_episode(&tr.model, &tr.spec, 555, 0, &CollectOptions::evaluation(None)).unwrap();
            let gmoves: usize = geval.trajectory.actions.iter().flatten().filter(|&&a| a == 1).count();
            let gtot: usize = geval.trajectory.actions.iter().map(|v| v.len()).sum();
            println!(
                "it {:3}: sampled move-frac {:.2} ret {:7.1} | greedy move-frac {:.2} ret {:7.1}",
                it + 1,
                tmoves as f64 / ttot as f64,
                out.trajectory.episode_return(),
                gmoves as f64 / gtot as f64,
                geval.trajectory.episode_return()
            );
        }
    }
}
