use cgibnet::comm::{sampling::ReparamVariant, CommConfig, CommMode};
use cgibnet::traffic::MapName;
use cgibnet::train::{evaluate, MappoCfg, MappoTrainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let comm_mode = match args.get(2).map(|s| s.as_str()) {
        Some("none") => CommMode::None,
        Some("full") => CommMode::Full,
        _ => CommMode::Cgibnet,
    };
    let beta_s: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let tau: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let epochs: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1);
    let embed: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(32);
    let ent: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let cfg = MappoCfg {
        map: MapName::Easy,
        comm_mode,
        comm: CommConfig {
            num_agents: 4,
            bits_per_message: 5,
            rounds: 1,
            temperature: tau,
            beta_s,
            beta_x: if beta_s == 0.0 { 0.0 } else { 0.001 },
            eval_mode: false,
            reparam: ReparamVariant::Conventional,
        },
        embed_dim: embed,
        gamma: 0.99,
        gae_lambda: 0.95,
        epsilon_clip: 0.2,
        lr_actor: 1e-3,
        lr_critic: 3e-3,
        entropy_coef: ent,
        value_coef: 0.5,
        batch_steps: 500,
        iterations: iters,
        ppo_epochs: epochs,
        max_grad_norm: 10.0,
        eval_interval: 50,
        eval_episodes: 20,
        seed,
        workers: 2,
    };
    let mut tr = MappoTrainer::new(cfg);
    for i in 1..=iters {
        let loss = tr.train_iteration().unwrap();
        if i % 25 == 0 {
            let r = evaluate(&tr.model, &tr.spec, 999, 20, None).unwrap();
            println!(
                "iter {i:4}  eval {:7.2} +- {:6.2}  train {:7.2}  succ {:4.2}  scr {:5.3}  sib {:6.3}  xib {:6.3}  task {:8.4}",
                r.return_mean, r.return_std, tr.last_batch_return(), r.success_rate, r.bandwidth.scr(), loss.sib_term, loss.xib_term, loss.task_loss
            );
        }
    }
}
