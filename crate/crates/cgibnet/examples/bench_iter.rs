use cgibnet::comm::{sampling::ReparamVariant, CommConfig, CommMode};
use cgibnet::traffic::MapName;
use cgibnet::train::{MappoCfg, MappoTrainer};
use std::time::Instant;

fn main() {
    let cfg = MappoCfg {
        map: MapName::Easy,
        comm_mode: CommMode::Cgibnet,
        comm: CommConfig {
            num_agents: 4,
            bits_per_message: 5,
            rounds: 1,
            temperature: 1.0,
            beta_s: 0.1,
            beta_x: 0.001,
            eval_mode: false,
            reparam: ReparamVariant::Conventional,
        },
        embed_dim: 32,
        gamma: 0.99,
        gae_lambda: 0.95,
        epsilon_clip: 0.2,
        lr_actor: 1e-3,
        lr_critic: 3e-3,
        entropy_coef: 0.01,
        value_coef: 0.5,
        batch_steps: 500,
        iterations: 10,
        ppo_epochs: 1,
        max_grad_norm: 10.0,
        eval_interval: 1000,
        eval_episodes: 4,
        seed: 0,
        workers: 2,
    };
    let mut tr = MappoTrainer::new(cfg);
    // warmup
    tr.train_iteration().unwrap();
    let t0 = Instant::now();
    let iters = 10;
    for _ in 0..iters {
        tr.train_iteration().unwrap();
    }
    let dt = t0.elapsed();
    println!(
        "{} iters in {:.2?} -> {:.1} ms/iter -> {:.1} min for 3000 iters",
        iters,
        dt,
        dt.as_secs_f64() * 1000.0 / iters as f64,
        dt.as_secs_f64() / iters as f64 * 3000.0 / 60.0
    );
}
