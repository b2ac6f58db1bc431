use cgibnet::comm::{sampling::ReparamVariant, CommConfig, CommMode};
use cgibnet::traffic::MapName;
use cgibnet::train::{QmixCfg, QmixTrainer};
use std::time::Instant;

fn main() {
    let cfg = QmixCfg {
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
        lr: 1e-3,
        batch_episodes: 64,
        episodes: 3000,
        replay_capacity: 5000,
        target_refresh: 200,
        eps_start: 1.0,
        eps_end: 0.05,
        eps_anneal_frac: 0.2,
        max_grad_norm: 10.0,
        eval_interval: 100000,
        eval_episodes: 2,
        seed: 0,
        workers: 2,
    };
    let mut tr = QmixTrainer::new(cfg);
    // fill buffer to batch size
    for e in 0..64 {
        tr.train_episode(e).unwrap();
    }
    let t0 = Instant::now();
    let n = 20;
    for e in 64..64 + n {
        tr.train_episode(e).unwrap();
    }
    let dt = t0.elapsed();
    println!(
        "{} episodes in {:.2?} -> {:.0} ms/episode -> {:.1} min for 3000 episodes",
        n,
        dt,
        dt.as_secs_f64() * 1000.0 / n as f64,
        dt.as_secs_f64() / n as f64 * 3000.0 / 60.0
    );
}
