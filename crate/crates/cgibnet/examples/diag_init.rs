use cgibnet::comm::{sampling::ReparamVariant, CommConfig, CommNet, CommNoise};
use cgibnet::nn::{ParamStore, Tape};
use cgibnet::rng::Pcg;

fn main() {
    let mut store = ParamStore::new();
    let mut rng = Pcg::from_seed_u64(0);
    let net = CommNet::new(&mut store, "comm", 54, 32, 5, 4, &mut rng);
    let cfg = CommConfig {
        num_agents: 4, bits_per_message: 5, rounds: 1, temperature: 1.0,
        beta_s: 0.1, beta_x: 0.001, eval_mode: false,
        reparam: ReparamVariant::Conventional,
    };
    let mut t = Tape::new();
    let p = store.bind_frozen(&mut t);
    let obs: Vec<f64> = (0..4*54).map(|i| if i % 54 == i / 54 { 1.0 } else { 0.0 }).collect();
    let obs = t.constant(4, 54, obs);
    let mut nr = Pcg::from_seed_u64(1);
    let noise = CommNoise::draw(&mut nr, 4, 5, 1);
    let out = net.communicate(&mut t, &p, obs, &[true; 4], &cfg, Some(&noise), None).unwrap();
    let r = &out.rounds[0];
    let alphas: Vec<f64> = r.valid_edges.iter().map(|&(j,k)| r.edge_probs[j*4+k]).collect();
    println!("alphas: {:?}", alphas.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>());
    println!("sib: {:.4}  xib: {:.4}", r.sib, r.xib);
    let sig: Vec<f64> = r.sigma[..5].to_vec();
    println!("sigma row0: {:?}", sig.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>());
}
