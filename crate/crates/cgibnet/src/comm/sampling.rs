//! Reparameterized sampling for edges and node messages.

use serde::{Deserialize, Serialize};

use crate::nn::graph::sigmoid;

/// Which reparameterization the node sampler uses.
///
/// `Conventional` is mu + sigma .* eps (the default). `MuTimesEpsPlusSigma`
/// is the mu .* eps + sigma variant kept behind this switch; the active
/// variant is recorded in every run manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReparamVariant {
    Conventional,
    MuTimesEpsPlusSigma,
}

impl Default for ReparamVariant {
    fn default() -> Self {
        ReparamVariant::Conventional
    }
}

/// Relaxed-Bernoulli edge sample.
///
/// Training: sigmoid((ln(alpha/(1-alpha)) + noise) / tau) where `noise` is
/// logistic, ln u - ln(1-u). Evaluation: hard 1[alpha >= 0.5].
pub fn sample_edge(alpha: f64, tau: f64, logistic_noise: f64, eval_mode: bool) -> f64 {
    debug_assert!(alpha > 0.0 && alpha < 1.0 && tau > 0.0);
    if eval_mode {
        if alpha >= 0.5 {
            1.0
        } else {
            0.0
        }
    } else {
        let logit = (alpha / (1.0 - alpha)).ln();
        sigmoid((logit + logistic_noise) / tau)
    }
}

/// Gaussian-reparameterized node message.
///
/// Training: the selected variant applied elementwise. Evaluation: the
/// distribution mean.
pub fn sample_node_message(
    mu: &[f64],
    sigma: &[f64],
    eps: &[f64],
    variant: ReparamVariant,
    eval_mode: bool,
) -> Vec<f64> {
    debug_assert_eq!(mu.len(), sigma.len());
    debug_assert_eq!(mu.len(), eps.len());
    if eval_mode {
        return mu.to_vec();
    }
    match variant {
        ReparamVariant::Conventional => mu
            .iter()
            .zip(sigma)
            .zip(eps)
            .map(|((&m, &s), &e)| m + s * e)
            .collect(),
        ReparamVariant::MuTimesEpsPlusSigma => mu
            .iter()
            .zip(sigma)
            .zip(eps)
            .map(|((&m, &s), &e)| m * e + s)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg;

    #[test]
    fn zero_noise_at_half_gives_half_for_any_temperature() {
        for tau in [0.01, 0.5, 1.0, 10.0] {
            assert_eq!(sample_edge(0.5, tau, 0.0, false), 0.5);
        }
    }

    #[test]
    fn low_temperature_saturates_samples() {
        // pointwise in the noise, the tau -> 0 limit is a hard sample
        let mut rng = Pcg::from_seed_u64(31);
        for _ in 0..1000 {
            let alpha = rng.uniform_in(0.05, 0.95);
            let noise = rng.logistic();
            let s = sample_edge(alpha, 1e-9, noise, false);
            assert!(s < 1e-9 || s > 1.0 - 1e-9, "sample {s} not saturated");
        }
        // at tau = 0.01 nearly every draw is already within 1e-3 of {0,1};
        // draws whose noise lands within ~0.07 of the logit knife edge are
        // the only exceptions
        let mut rng = Pcg::from_seed_u64(31);
        let saturated = (0..1000)
            .filter(|_| {
                let alpha = rng.uniform_in(0.05, 0.95);
                let s = sample_edge(alpha, 0.01, rng.logistic(), false);
                s < 1e-3 || s > 1.0 - 1e-3
            })
            .count();
        assert!(saturated >= 975, "only {saturated}/1000 saturated");
    }

    #[test]
    fn hard_threshold_mean_matches_alpha() {
        // Monte-Carlo oracle: thresholded relaxed samples are Bernoulli(alpha)
        let mut rng = Pcg::from_seed_u64(32);
        let alpha = 0.8;
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let s = sample_edge(alpha, 1.0, rng.logistic(), false);
            acc += if s >= 0.5 { 1.0 } else { 0.0 };
        }
        let mean = acc / n as f64;
        assert!((mean - alpha).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn eval_mode_is_a_hard_threshold() {
        assert_eq!(sample_edge(0.51, 1.0, 5.0, true), 1.0);
        assert_eq!(sample_edge(0.49, 1.0, 5.0, true), 0.0);
    }

    #[test]
    fn printed_variant_reduces_to_sigma_at_zero_mean() {
        let sigma = vec![0.3, 0.7];
        let out = sample_node_message(
            &[0.0, 0.0],
            &sigma,
            &[2.5, -1.7],
            ReparamVariant::MuTimesEpsPlusSigma,
            false,
        );
        assert_eq!(out, sigma);
    }

    #[test]
    fn fixed_noise_means_fixed_samples() {
        let mu = [0.4, -0.2];
        let sigma = [0.5, 1.5];
        let mut r1 = Pcg::from_seed_u64(7);
        let mut r2 = Pcg::from_seed_u64(7);
        let e1: Vec<f64> = (0..2).map(|_| r1.normal()).collect();
        let e2: Vec<f64> = (0..2).map(|_| r2.normal()).collect();
        let a = sample_node_message(&mu, &sigma, &e1, ReparamVariant::Conventional, false);
        let b = sample_node_message(&mu, &sigma, &e2, ReparamVariant::Conventional, false);
        assert_eq!(a, b);
    }

    #[test]
    fn conventional_variant_moments_match_target() {
        // Monte-Carlo moments oracle under the conventional ordering
        let mut rng = Pcg::from_seed_u64(33);
        let n = 100_000usize;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let e = rng.normal();
            let v = sample_node_message(&[1.0], &[1.0], &[e], ReparamVariant::Conventional, false)[0];
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        let se = (2.0 / n as f64).sqrt().max(1.0 / (n as f64).sqrt());
        assert!((mean - 1.0).abs() < 3.0 * (1.0 / (n as f64).sqrt()) * 1.5, "mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * se * 1.5, "var {var}");
    }

    #[test]
    fn eval_mode_transmits_the_mean() {
        let out = sample_node_message(&[0.9, -0.1], &[2.0, 3.0], &[5.0, 5.0], ReparamVariant::Conventional, true);
        assert_eq!(out, vec![0.9, -0.1]);
    }
}
