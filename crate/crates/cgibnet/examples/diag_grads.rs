use cgibnet::comm::{sampling::ReparamVariant, CommConfig, CommMode};
use cgibnet::traffic::MapName;
use cgibnet::train::mappo::{mappo_loss, MappoBatch, MappoCfg, MappoTrainer};

fn main() {
    let mode = match std::env::args().nth(1).as_deref() {
        Some("none") => CommMode::None,
        Some("full") => CommMode::Full,
        _ => CommMode::Cgibnet,
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
        eval_interval: 1000, eval_episodes: 2, seed: 0, workers: 2,
    };
    let mut tr = MappoTrainer::new(cfg);
    for it in 0..5 {
        let eps = tr.collect_batch().unwrap();
        let mut vn = cgibnet::train::mappo::ValueNorm::new();
        let batch = MappoBatch::prepare(&eps, 0.99, 0.95, &mut vn).unwrap();
        let (lb, ag, cg) = mappo_loss(&tr.model, &batch, &tr.cfg).unwrap();
        let an: f64 = ag.iter().map(|g| g * g).sum::<f64>().sqrt();
        let cn: f64 = cg.iter().map(|g| g * g).sum::<f64>().sqrt();
        // per segment-group norms
        let mut groups: std::collections::BTreeMap<String, f64> = Default::default();
        for seg in tr.model.actor_store.segments() {
            let pfx = seg.name.split('.').next().unwrap().to_string();
            let s: f64 = ag[seg.offset..seg.offset + seg.rows * seg.cols].iter().map(|g| g * g).sum();
            *groups.entry(pfx).or_default() += s;
        }
        let gs: Vec<String> = groups.iter().map(|(k, v)| format!("{k}={:.2}", v.sqrt())).collect();
        println!("it {it}: actor_norm {an:9.2}  critic_norm {cn:9.2}  task {:9.1} [{}]", lb.task_loss, gs.join(" "));
        // apply update like the trainer does
        let mut ag = ag; let mut cg = cg;
        cgibnet::train::optim::clip_grad_norm(&mut ag, 10.0);
        cgibnet::train::optim::clip_grad_norm(&mut cg, 10.0);
        // no optimizer state persistence needed for diagnosis; reuse trainer
        let _ = (ag, cg);
        tr.train_iteration().unwrap();
    }
}
