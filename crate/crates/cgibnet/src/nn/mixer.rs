//! Monotonic mixing network.
//!
//! A hypernetwork maps the global state to the mixing weights; absolute
//! values make every weight applied to the per-agent utilities non-negative,
//! so the joint value is monotone in each input utility and per-agent argmax
//! decomposition is sound.

use crate::rng::Pcg;

use super::graph::{NodeId, Tape};
use super::layers::{Linear, Mlp2};
use super::params::{ParamStore, TapeParams};

#[derive(Debug, Clone)]
pub struct MonotonicMixer {
    hyper_w1: Linear,
    hyper_b1: Linear,
    hyper_w2: Linear,
    hyper_b2: Mlp2,
    pub num_agents: usize,
    pub state_dim: usize,
    pub hidden_dim: usize,
}

impl MonotonicMixer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        num_agents: usize,
        state_dim: usize,
        hidden_dim: usize,
        rng: &mut Pcg,
    ) -> Self {
        MonotonicMixer {
            hyper_w1: Linear::new(store, &format!("{name}.hyper_w1"), state_dim, num_agents * hidden_dim, rng),
            hyper_b1: Linear::new(store, &format!("{name}.hyper_b1"), state_dim, hidden_dim, rng),
            hyper_w2: Linear::new(store, &format!("{name}.hyper_w2"), state_dim, hidden_dim, rng),
            hyper_b2: Mlp2::new(store, &format!("{name}.hyper_b2"), state_dim, hidden_dim, 1, rng),
            num_agents,
            state_dim,
            hidden_dim,
        }
    }

    /// Mix per-agent utilities [1,N] under state [1,S] into a joint scalar [1,1].
    pub fn forward(&self, t: &mut Tape, p: &TapeParams, qs: NodeId, state: NodeId) -> NodeId {
        let n = self.num_agents;
        let hd = self.hidden_dim;

        let w1_flat = self.hyper_w1.forward(t, p, state);
        let w1_flat = t.abs(w1_flat);
        let w1 = t.reshape(w1_flat, n, hd);
        let b1 = self.hyper_b1.forward(t, p, state);

        let h = t.matmul(qs, w1);
        let h = t.add(h, b1);
        let h = t.elu(h);

        let w2_flat = self.hyper_w2.forward(t, p, state);
        let w2_flat = t.abs(w2_flat);
        let w2 = t.reshape(w2_flat, hd, 1);
        let b2 = self.hyper_b2.forward(t, p, state);

        let out = t.matmul(h, w2);
        t.add(out, b2)
    }

    /// Plain-value forward used by probes and targets.
    pub fn eval(&self, store: &ParamStore, qs: &[f64], state: &[f64]) -> f64 {
        let mut t = Tape::new();
        let p = store.bind_frozen(&mut t);
        let q = t.constant(1, self.num_agents, qs.to_vec());
        let s = t.constant(1, self.state_dim, state.to_vec());
        let out = self.forward(&mut t, &p, q, s);
        t.scalar(out)
    }
}

/// Numerically estimate min over trials of min_i dQ_tot/dQ_i.
pub struct MonotonicityReport {
    pub min_partial: f64,
    pub trials: usize,
}

pub fn mixer_monotonicity_probe(
    mixer: &MonotonicMixer,
    store: &ParamStore,
    trials: usize,
    rng: &mut Pcg,
) -> MonotonicityReport {
    let h = 1e-6;
    let mut min_partial = f64::INFINITY;
    for _ in 0..trials {
        let state: Vec<f64> = (0..mixer.state_dim).map(|_| rng.normal()).collect();
        let mut qs: Vec<f64> = (0..mixer.num_agents).map(|_| rng.normal()).collect();
        for i in 0..mixer.num_agents {
            let orig = qs[i];
            qs[i] = orig + h;
            let up = mixer.eval(store, &qs, &state);
            qs[i] = orig - h;
            let down = mixer.eval(store, &qs, &state);
            qs[i] = orig;
            min_partial = min_partial.min((up - down) / (2.0 * h));
        }
    }
    MonotonicityReport { min_partial, trials }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(seed: u64, n: usize, state_dim: usize) -> (MonotonicMixer, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = Pcg::from_seed_u64(seed);
        let mixer = MonotonicMixer::new(&mut store, "mixer", n, state_dim, 32, &mut rng);
        (mixer, store)
    }

    #[test]
    fn random_mixer_is_monotone() {
        let (mixer, store) = build(17, 3, 12);
        let mut rng = Pcg::from_seed_u64(18);
        let report = mixer_monotonicity_probe(&mixer, &store, 200, &mut rng);
        assert!(report.min_partial >= -1e-6, "min partial {}", report.min_partial);
    }

    #[test]
    fn negated_weight_fixture_is_detected() {
        // Flip the sign bypass: feed utilities through a mixer whose first
        // layer weight is forced negative by replacing abs with identity via
        // a direct handcrafted evaluation.
        let (mixer, store) = build(19, 2, 6);
        let mut broken = store.clone();
        // hyper_w2 bias: push its output strongly negative so that the
        // |.| in forward is what saves monotonicity; emulate the broken mixer
        // by evaluating Q_tot with negated second-layer weights manually.
        let seg = broken
            .segments()
            .iter()
            .position(|s| s.name == "mixer.hyper_w2.b")
            .unwrap();
        let meta = broken.segments()[seg].clone();
        for v in &mut broken.data_mut()[meta.offset..meta.offset + meta.rows * meta.cols] {
            *v = -5.0;
        }
        // The |.| transform must still keep this monotone.
        let mut rng = Pcg::from_seed_u64(20);
        let report = mixer_monotonicity_probe(&mixer, &broken, 100, &mut rng);
        assert!(report.min_partial >= -1e-6);

        // A genuinely negated path (w2 applied with a minus sign) must show
        // a negative partial.
        let eval_negated = |qs: &[f64], state: &[f64]| -> f64 {
            let mut t = Tape::new();
            let p = store.bind_frozen(&mut t);
            let q = t.constant(1, 2, qs.to_vec());
            let s = t.constant(1, 6, state.to_vec());
            let pos = mixer.forward(&mut t, &p, q, s);
            let neg = t.scale(pos, -1.0);
            t.scalar(neg)
        };
        let state: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 1.0).collect();
        let h = 1e-6;
        let mut min_partial = f64::INFINITY;
        for i in 0..2 {
            let mut qs = vec![0.4, -0.2];
            qs[i] += h;
            let up = eval_negated(&qs, &state);
            qs[i] -= 2.0 * h;
            let down = eval_negated(&qs, &state);
            min_partial = min_partial.min((up - down) / (2.0 * h));
        }
        assert!(min_partial < 0.0, "negated mixer should violate monotonicity");
    }
}
