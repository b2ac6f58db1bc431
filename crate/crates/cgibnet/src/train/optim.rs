//! Optimizers over flat parameter vectors.

/// Global-norm gradient clipping. Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm: f64 = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct RmsProp {
    lr: f64,
    alpha: f64,
    eps: Vec<f64>,
    sq: Vec<f64>,
}

impl RmsProp {
    pub fn new(len: usize, lr: f64) -> Self {
        RmsProp {
            lr,
            alpha: 0.99,
            eps: vec![1e-5; len],
            sq: vec![0.0; len],
        }
    }

    /// Damp the adaptive renormalization for a coordinate range: with a firm
    /// eps, near-zero systematic gradients (KL priors acting on currently
    /// unused channel parameters) stay slow instead of moving at full step
    /// size, while genuinely strong gradients still pass through.
    pub fn set_eps_range(&mut self, range: std::ops::Range<usize>, eps: f64) {
        for e in &mut self.eps[range] {
            *e = eps;
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            let s = &mut self.sq[i];
            *s = self.alpha * *s + (1.0 - self.alpha) * g * g;
            *p -= self.lr * g / (s.sqrt() + self.eps[i]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: Vec<f64>,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: vec![1e-8; len],
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Same role as [`RmsProp::set_eps_range`]: keep tiny systematic prior
    /// gradients from moving at full step size.
    pub fn set_eps_range(&mut self, range: std::ops::Range<usize>, eps: f64) {
        for e in &mut self.eps[range] {
            *e = eps;
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut theta = vec![5.0, -3.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let grads: Vec<f64> = theta.iter().map(|&x| 2.0 * x).collect();
            opt.step(&mut theta, &grads);
        }
        assert!(theta.iter().all(|&x| x.abs() < 1e-3), "{theta:?}");
    }

    #[test]
    fn rmsprop_minimizes_a_quadratic() {
        let mut theta = vec![2.0];
        let mut opt = RmsProp::new(1, 0.01);
        for _ in 0..2000 {
            let grads = vec![2.0 * theta[0]];
            opt.step(&mut theta, &grads);
        }
        assert!(theta[0].abs() < 1e-2, "{theta:?}");
    }

    #[test]
    fn clipping_preserves_direction() {
        let mut g = vec![3.0, 4.0];
        let norm = clip_grad_norm(&mut g, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((g[0] - 0.6).abs() < 1e-12);
        assert!((g[1] - 0.8).abs() < 1e-12);
    }
}
