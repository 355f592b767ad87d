//! Exact Poisson variates.
//!
//! Small means use Knuth's multiplication method; from `KNUTH_LIMIT` upward
//! the transformed rejection with squeeze of Hörmann (PTRS) is used, which
//! stays exact for arbitrarily large means without any normal approximation.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};

pub const KNUTH_LIMIT: f64 = 30.0;

/// Draws one Poisson variate with mean `lambda`.
pub fn poisson_sample<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if !lambda.is_finite() {
        return Err(invalid(format!(
            "Poisson mean must be finite, got {lambda}"
        )));
    }
    if lambda < 0.0 {
        return Err(invalid(format!("Poisson mean must be >= 0, got {lambda}")));
    }
    Ok(if lambda == 0.0 {
        0
    } else if lambda < KNUTH_LIMIT {
        knuth(lambda, rng)
    } else {
        ptrs(lambda, rng)
    })
}

fn knuth<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let limit = (-lambda).exp();
    let mut k = 0;
    let mut p: f64 = rng.random();
    while p > limit {
        k += 1;
        p *= rng.random::<f64>();
    }
    k
}

fn ptrs<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -lambda + k * loglam - ln_gamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(lambda: f64, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n)
            .map(|_| poisson_sample(lambda, &mut rng).unwrap() as f64)
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (mean, var)
    }

    #[test]
    fn zero_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(poisson_sample(0.0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn negative_or_nan_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(poisson_sample(-1.0, &mut rng).is_err());
        assert!(poisson_sample(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn large_mean_moments() {
        let (mean, var) = moments(1000.0, 100_000, 42);
        assert!((mean - 1000.0).abs() / 1000.0 < 0.01, "mean {mean}");
        assert!((var - 1000.0).abs() / 1000.0 < 0.05, "var {var}");
    }

    #[test]
    fn small_mean_moments() {
        for lambda in [0.5, 4.0, 29.5] {
            let (mean, var) = moments(lambda, 100_000, 7);
            assert!(
                (mean - lambda).abs() / lambda < 0.02,
                "{lambda}: mean {mean}"
            );
            assert!((var - lambda).abs() / lambda < 0.05, "{lambda}: var {var}");
        }
    }

    #[test]
    fn pmf_matches_at_rejection_boundary() {
        // chi-square style check of frequencies near the mean for lambda = 30
        let lambda = 30.0;
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 80];
        for _ in 0..n {
            let k = poisson_sample(lambda, &mut rng).unwrap() as usize;
            if k < counts.len() {
                counts[k] += 1;
            }
        }
        for k in 20..40 {
            let p = (-lambda + k as f64 * f64::ln(lambda) - ln_gamma(k as f64 + 1.0)).exp();
            let expected = p * n as f64;
            let z = (counts[k] as f64 - expected) / expected.sqrt();
            assert!(z.abs() < 5.0, "k={k}: {} vs {expected}", counts[k]);
        }
    }

    #[test]
    fn seeded_sequence_reproducible() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|i| poisson_sample(i as f64 * 3.7, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }
}
