use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::error::{Error, Result};

fn check(k: usize, alpha: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(())
}

/// Expected bag bias `E|k - 2m| / k` for `m ~ Binom(k, alpha)`: the bias of
/// a retriever whose picks are independent of the attribute, when a share
/// `alpha` of the candidates belongs to group 0.
///
/// Terms are evaluated in log space, so `k` in the tens of thousands is fine.
pub fn expected_bias_binomial(k: usize, alpha: f64) -> Result<f64> {
    check(k, alpha)?;
    if alpha == 0.0 || alpha == 1.0 {
        return Ok(1.0);
    }
    let (ln_a, ln_b) = (alpha.ln(), (1.0 - alpha).ln());
    let kf = k as f64;
    let mut ln_choose = 0.0;
    let mut total = 0.0;
    for m in 0..=k {
        if m > 0 {
            ln_choose += ((k - m + 1) as f64).ln() - (m as f64).ln();
        }
        let mf = m as f64;
        let weight = (ln_choose + mf * ln_a + (kf - mf) * ln_b).exp();
        total += weight * (kf - 2.0 * mf).abs() / kf;
    }
    Ok(total.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(trials)`; zero for one trial.
    pub std_error: f64,
}

/// Simulates `trials` draws of `m ~ Binom(k, alpha)` and averages
/// `|k - 2m| / k`.
pub fn monte_carlo_expected_bias(k: usize, alpha: f64, trials: usize, seed: u64) -> Result<MonteCarloEstimate> {
    check(k, alpha)?;
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let dist = Binomial::new(k as u64, alpha).map_err(|_| Error::InvalidAlpha(alpha))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kf = k as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..trials {
        let m = dist.sample(&mut rng) as f64;
        let b = (kf - 2.0 * m).abs() / kf;
        sum += b;
        sum_sq += b * b;
    }
    let n = trials as f64;
    let mean = sum / n;
    let std_error = if trials > 1 {
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloEstimate { mean, std_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert!((expected_bias_binomial(2, 0.5).unwrap() - 0.5).abs() < 1e-15);
        for alpha in [0.0, 0.1, 0.5, 0.9, 1.0] {
            assert!((expected_bias_binomial(1, alpha).unwrap() - 1.0).abs() < 1e-15);
        }
        for k in [1, 7, 100] {
            assert_eq!(expected_bias_binomial(k, 0.0).unwrap(), 1.0);
            assert_eq!(expected_bias_binomial(k, 1.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn k100_balanced_value() {
        let v = expected_bias_binomial(100, 0.5).unwrap();
        assert!((v - 0.0796).abs() < 1e-4, "{v}");
    }

    #[test]
    fn large_k_is_finite() {
        let v = expected_bias_binomial(10_000, 0.5).unwrap();
        assert!(v > 0.0 && v < 0.01, "{v}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(expected_bias_binomial(3, 1.5), Err(Error::InvalidAlpha(1.5)));
        assert!(expected_bias_binomial(0, 0.5).is_err());
        assert!(monte_carlo_expected_bias(3, -0.1, 10, 0).is_err());
        assert!(monte_carlo_expected_bias(3, 0.5, 0, 0).is_err());
    }

    #[test]
    fn single_trial_is_deterministic() {
        let a = monte_carlo_expected_bias(5, 0.3, 1, 11).unwrap();
        let b = monte_carlo_expected_bias(5, 0.3, 1, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.std_error, 0.0);
        let allowed = [1.0, 0.6, 0.2];
        assert!(allowed.iter().any(|v| (v - a.mean).abs() < 1e-12), "{}", a.mean);
    }

    #[test]
    fn monte_carlo_agrees_with_exact_sum() {
        for k in [2, 100] {
            let mc = monte_carlo_expected_bias(k, 0.5, 100_000, 5).unwrap();
            let exact = expected_bias_binomial(k, 0.5).unwrap();
            assert!((mc.mean - exact).abs() < 3.0 * mc.std_error, "k={k}: {mc:?} vs {exact}");
        }
    }
}
