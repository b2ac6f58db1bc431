//! Layer building blocks: linear maps, two-layer feed-forward nets and a
//! GRU cell (the recurrent agent core).

use crate::rng::Pcg;

use super::graph::{NodeId, Tape};
use super::init::{fan_in_uniform, orthogonal};
use super::params::{ParamStore, SegmentId, TapeParams};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: SegmentId,
    pub b: Option<SegmentId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Pcg) -> Self {
        Self::build(store, name, in_dim, out_dim, true, rng)
    }

    /// Bias-free variant; maps zero input to exactly zero output.
    pub fn new_no_bias(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Pcg) -> Self {
        Self::build(store, name, in_dim, out_dim, false, rng)
    }

    fn build(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut Pcg) -> Self {
        let w = store.alloc(&format!("{name}.w"), in_dim, out_dim, fan_in_uniform(rng, in_dim));
        let b = bias.then(|| store.alloc(&format!("{name}.b"), 1, out_dim, || 0.0));
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, t: &mut Tape, p: &TapeParams, x: NodeId) -> NodeId {
        let y = t.matmul(x, p.node(self.w));
        match self.b {
            Some(b) => t.add_row(y, p.node(b)),
            None => y,
        }
    }
}

/// Two-layer feed-forward net with ReLU in between.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, out_dim: usize, rng: &mut Pcg) -> Self {
        Mlp2 {
            l1: Linear::new(store, &format!("{name}.l1"), in_dim, hidden, rng),
            l2: Linear::new(store, &format!("{name}.l2"), hidden, out_dim, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, p: &TapeParams, x: NodeId) -> NodeId {
        let h = self.l1.forward(t, p, x);
        let h = t.relu(h);
        self.l2.forward(t, p, h)
    }
}

/// GRU cell. Gate layout in the fused weight matrices: [update, reset, candidate].
///
/// Input kernel uses fan-in scaling, the recurrent kernel is orthogonal
/// per gate. Hidden state is zero-initialized at episode starts by the
/// caller.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub wx: SegmentId,
    pub wh: SegmentId,
    pub b: SegmentId,
    pub in_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden_dim: usize, rng: &mut Pcg) -> Self {
        let wx = store.alloc(&format!("{name}.wx"), in_dim, 3 * hidden_dim, fan_in_uniform(rng, in_dim));
        // three independent orthogonal recurrent kernels, fused column-wise
        let mut whv = vec![0.0; hidden_dim * 3 * hidden_dim];
        for gate in 0..3 {
            let q = orthogonal(rng, hidden_dim, hidden_dim);
            for r in 0..hidden_dim {
                for c in 0..hidden_dim {
                    whv[r * 3 * hidden_dim + gate * hidden_dim + c] = q[r * hidden_dim + c];
                }
            }
        }
        let mut it = whv.into_iter();
        let wh = store.alloc(&format!("{name}.wh"), hidden_dim, 3 * hidden_dim, || it.next().unwrap());
        let b = store.alloc(&format!("{name}.b"), 1, 3 * hidden_dim, || 0.0);
        GruCell {
            wx,
            wh,
            b,
            in_dim,
            hidden_dim,
        }
    }

    /// One step: x [B,in], h [B,H] -> h' [B,H].
    pub fn step(&self, t: &mut Tape, p: &TapeParams, x: NodeId, h: NodeId) -> NodeId {
        let hd = self.hidden_dim;
        let gx = t.matmul(x, p.node(self.wx));
        let gx = t.add_row(gx, p.node(self.b));
        let gh = t.matmul(h, p.node(self.wh));

        let zx = t.slice_cols(gx, 0, hd);
        let zh = t.slice_cols(gh, 0, hd);
        let z_in = t.add(zx, zh);
        let z = t.sigmoid(z_in);

        let rx = t.slice_cols(gx, hd, 2 * hd);
        let rh = t.slice_cols(gh, hd, 2 * hd);
        let r_in = t.add(rx, rh);
        let r = t.sigmoid(r_in);

        let cx = t.slice_cols(gx, 2 * hd, 3 * hd);
        let ch = t.slice_cols(gh, 2 * hd, 3 * hd);
        let rch = t.mul(r, ch);
        let c_in = t.add(cx, rch);
        let c = t.tanh(c_in);

        // h' = z*h + (1-z)*c
        let zh_term = t.mul(z, h);
        let zc = t.mul(z, c);
        let c_minus_zc = t.sub(c, zc);
        t.add(zh_term, c_minus_zc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_no_bias_maps_zero_to_zero() {
        let mut store = ParamStore::new();
        let mut rng = Pcg::from_seed_u64(3);
        let lin = Linear::new_no_bias(&mut store, "g", 4, 3, &mut rng);
        let mut t = Tape::new();
        let p = store.bind_frozen(&mut t);
        let x = t.constant(2, 4, vec![0.0; 8]);
        let y = lin.forward(&mut t, &p, x);
        assert!(t.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_step_keeps_shape_and_changes_state() {
        let mut store = ParamStore::new();
        let mut rng = Pcg::from_seed_u64(4);
        let gru = GruCell::new(&mut store, "core", 6, 8, &mut rng);
        let mut t = Tape::new();
        let p = store.bind_frozen(&mut t);
        let x = t.constant(3, 6, (0..18).map(|i| i as f64 * 0.1).collect());
        let h0 = t.constant(3, 8, vec![0.0; 24]);
        let h1 = gru.step(&mut t, &p, x, h0);
        assert_eq!(t.shape(h1), (3, 8));
        assert!(t.value(h1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn identical_seed_gives_identical_init() {
        let build = || {
            let mut store = ParamStore::new();
            let mut rng = Pcg::from_seed_u64(42);
            let _ = GruCell::new(&mut store, "core", 5, 7, &mut rng);
            let _ = Linear::new(&mut store, "head", 7, 2, &mut rng);
            store.data().to_vec()
        };
        assert_eq!(build(), build());
    }
}
