use cgibnet::comm::{sampling::ReparamVariant, CommConfig, CommMode};
use cgibnet::traffic::MapName;
use cgibnet::train::{evaluate, QmixCfg, QmixTrainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let episodes: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let comm_mode = match args.get(2).map(|s| s.as_str()) {
        Some("none") => CommMode::None,
        Some("full") => CommMode::Full,
        _ => CommMode::Cgibnet,
    };
    let cfg = QmixCfg {
        map: MapName::Easy,
        comm_mode,
        comm: CommConfig {
            num_agents: 4, bits_per_message: 5, rounds: 1, temperature: 1.0,
            beta_s: 0.1, beta_x: 0.001, eval_mode: false,
            reparam: ReparamVariant::Conventional,
        },
        embed_dim: 32, gamma: 0.99, lr: 1e-3, reward_scale: 0.02,
        batch_episodes: 64, episodes, replay_capacity: 5000, target_refresh: 200,
        eps_start: 1.0, eps_end: 0.05, eps_anneal_frac: 0.2,
        max_grad_norm: 10.0, eval_interval: 100000, eval_episodes: 2,
        seed: 0, workers: 2,
    };
    let mut tr = QmixTrainer::new(cfg);
    let mut last = None;
    for e in 0..episodes {
        if let Some(lb) = tr.train_episode(e).unwrap() {
            last = Some(lb);
        }
        if (e + 1) % 150 == 0 {
            let r = evaluate(&tr.model, &tr.spec, 999, 20, None).unwrap();
            let lb = last.clone().unwrap();
            println!(
                "ep {:4}  eval {:7.2} +- {:6.2}  succ {:4.2}  scr {:5.3}  sib {:6.3}  xib {:6.3}  td {:9.4}",
                e + 1, r.return_mean, r.return_std, r.success_rate, r.bandwidth.scr(),
                lb.sib_term, lb.xib_term, lb.task_loss
            );
        }
    }
}
