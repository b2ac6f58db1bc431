//! Closed-form KL divergences against the two fixed priors.

use crate::{CgibError, Result};

/// KL(Bernoulli(alpha) || Bernoulli(0.5)) = a ln(2a) + (1-a) ln(2(1-a)).
/// Zero iff alpha = 0.5; approaches ln 2 at the deterministic limits.
pub fn kl_bernoulli_vs_half(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CgibError::numerical(format!(
            "kl_bernoulli_vs_half: alpha {alpha} outside (0,1)"
        )));
    }
    Ok(alpha * (2.0 * alpha).ln() + (1.0 - alpha) * (2.0 * (1.0 - alpha)).ln())
}

/// Per-bit KL(N(mu_b, sigma_b^2) || N(0,1)) = (mu_b^2 + sigma_b^2 - ln sigma_b^2 - 1) / 2.
/// `sigma` is the standard deviation and must be strictly positive.
pub fn kl_diag_gaussian_vs_standard(mu: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() {
        return Err(CgibError::numerical(format!(
            "kl_diag_gaussian_vs_standard: {} means vs {} stds",
            mu.len(),
            sigma.len()
        )));
    }
    if let Some(s) = sigma.iter().find(|s| **s <= 0.0) {
        return Err(CgibError::numerical(format!(
            "kl_diag_gaussian_vs_standard: non-positive sigma {s}"
        )));
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| 0.5 * (m * m + s * s - (s * s).ln() - 1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Numerical-integration oracle for the Bernoulli KL: the support is
    /// {0,1}, so the "integral" is the exact two-term sum against the
    /// uniform prior.
    fn bernoulli_kl_oracle(alpha: f64) -> f64 {
        let terms = [(alpha, 0.5), (1.0 - alpha, 0.5)];
        terms.iter().map(|(p, q)| p * (p / q).ln()).sum()
    }

    /// Quadrature oracle for the Gaussian KL: Simpson's rule over a wide
    /// bracket of q = N(mu, sigma^2) against p = N(0,1). Log densities are
    /// evaluated analytically so the tails never overflow the ratio.
    fn gaussian_kl_oracle(mu: f64, sigma: f64) -> f64 {
        let lo = mu - 14.0 * sigma.max(1.0) - 14.0;
        let hi = mu + 14.0 * sigma.max(1.0) + 14.0;
        let n = 40_000usize; // even
        let h = (hi - lo) / n as f64;
        let f = |x: f64| {
            let z = (x - mu) / sigma;
            let qx = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            // ln q - ln p without forming the underflowing ratio
            let log_ratio = 0.5 * x * x - 0.5 * z * z - sigma.ln();
            qx * log_ratio
        };
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let x = lo + i as f64 * h;
            acc += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn bernoulli_prior_matches_posterior_at_half() {
        assert_eq!(kl_bernoulli_vs_half(0.5).unwrap(), 0.0);
    }

    #[test]
    fn bernoulli_deterministic_limit_is_ln2() {
        let v = kl_bernoulli_vs_half(1.0 - 1e-12).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-9, "{v}");
    }

    #[test]
    fn bernoulli_at_point_nine() {
        // frozen from the two-term KL sum: 0.9 ln(0.9/0.5) + 0.1 ln(0.1/0.5)
        let v = kl_bernoulli_vs_half(0.9).unwrap();
        assert!((v - 0.3680642).abs() < 1e-6, "{v}");
        assert!((v - bernoulli_kl_oracle(0.9)).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_out_of_domain_is_numerical_error() {
        assert!(kl_bernoulli_vs_half(0.0).is_err());
        assert!(kl_bernoulli_vs_half(1.0).is_err());
        assert!(kl_bernoulli_vs_half(-0.2).is_err());
    }

    #[test]
    fn gaussian_standard_prior_gives_zero() {
        let v = kl_diag_gaussian_vs_standard(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(v.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn gaussian_unit_mean_gives_half() {
        let v = kl_diag_gaussian_vs_standard(&[1.0], &[1.0]).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_wide_posterior_frozen_value() {
        // mu=0, sigma=2: 0.5*(4 - ln 4 - 1) = 0.806852...
        let v = kl_diag_gaussian_vs_standard(&[0.0], &[2.0]).unwrap();
        assert!((v[0] - 0.8068528).abs() < 1e-6, "{}", v[0]);
    }

    #[test]
    fn gaussian_nonpositive_sigma_rejected() {
        assert!(kl_diag_gaussian_vs_standard(&[0.0], &[0.0]).is_err());
        assert!(kl_diag_gaussian_vs_standard(&[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn closed_forms_match_integration_oracles_on_random_inputs() {
        let mut rng = crate::rng::Pcg::from_seed_u64(123);
        for _ in 0..100 {
            let alpha = rng.uniform_in(0.02, 0.98);
            let closed = kl_bernoulli_vs_half(alpha).unwrap();
            assert!(
                (closed - bernoulli_kl_oracle(alpha)).abs() < 1e-6,
                "alpha {alpha}"
            );
        }
        for _ in 0..100 {
            let mu = rng.uniform_in(-3.0, 3.0);
            let sigma = rng.uniform_in(0.05, 4.0);
            let closed = kl_diag_gaussian_vs_standard(&[mu], &[sigma]).unwrap()[0];
            let oracle = gaussian_kl_oracle(mu, sigma);
            assert!(
                (closed - oracle).abs() < 1e-6,
                "mu {mu} sigma {sigma}: {closed} vs {oracle}"
            );
        }
    }

    #[test]
    fn both_kls_strictly_positive_off_prior() {
        assert!(kl_bernoulli_vs_half(0.5001).unwrap() > 0.0);
        assert!(kl_bernoulli_vs_half(0.4999).unwrap() > 0.0);
        assert!(kl_diag_gaussian_vs_standard(&[0.001], &[1.0]).unwrap()[0] > 0.0);
        assert!(kl_diag_gaussian_vs_standard(&[0.0], &[1.001]).unwrap()[0] > 0.0);
        assert!(kl_diag_gaussian_vs_standard(&[0.0], &[0.999]).unwrap()[0] > 0.0);
    }
}
