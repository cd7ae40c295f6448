use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{RngStream, Vector};

pub fn standard_normal(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform draw from `[lo, hi)`.
pub fn uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// `n` i.i.d. draws from `N(mean, std^2)`. `std == 0` yields the constant
/// vector without consuming randomness.
pub fn sample_gaussian<T: Real>(
    rng: &mut RngStream,
    mean: T,
    std: T,
    n: usize,
) -> Result<Vector<T>> {
    if !(std >= T::zero()) || !std.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "standard deviation must be finite and >= 0, got {std}"
        )));
    }
    if std == T::zero() {
        return Vector::filled(n, mean);
    }
    let values = (0..n)
        .map(|_| mean + std * T::of(standard_normal(rng)))
        .collect();
    Vector::new(values)
}

/// One draw from `Dirichlet(alpha)` via normalised Gamma variates.
pub fn sample_dirichlet(rng: &mut RngStream, alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::Empty("dirichlet concentration"));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dirichlet concentration must be positive, got {a}"
        )));
    }
    let gammas = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::InvalidParameter(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    // Tiny concentrations can underflow every component to zero.
    for _ in 0..1000 {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|d| d / total).collect());
        }
    }
    Err(Error::Degenerate("dirichlet draw underflowed repeatedly"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_is_constant() {
        let mut rng = RngStream::new(1, 0);
        let v = sample_gaussian(&mut rng, 0.0f64, 0.0, 4).unwrap();
        assert_eq!(v.as_slice(), &[0.0; 4]);
    }

    #[test]
    fn negative_std_rejected() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_gaussian(&mut rng, 0.0f64, -1.0, 4).is_err());
    }

    #[test]
    fn gaussian_mean_monte_carlo() {
        let mut rng = RngStream::new(11, 0);
        let v = sample_gaussian(&mut rng, 2.0f64, 1.0, 1_000_000).unwrap();
        let mean = v.as_slice().iter().sum::<f64>() / 1e6;
        assert!((mean - 2.0).abs() < 2e-3, "mean {mean}");
    }

    #[test]
    fn gaussian_variance_monte_carlo() {
        let mut rng = RngStream::new(12, 0);
        let v = sample_gaussian(&mut rng, 0.0f64, 3.0, 1_000_000).unwrap();
        let xs = v.as_slice();
        let mean = xs.iter().sum::<f64>() / 1e6;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (1e6 - 1.0);
        assert!((var / 9.0 - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn dirichlet_is_on_simplex() {
        let mut rng = RngStream::new(3, 0);
        for alpha in [0.1, 0.5, 1.0, 10.0] {
            for _ in 0..100 {
                let p = sample_dirichlet(&mut rng, &[alpha; 5]).unwrap();
                assert!(p.iter().all(|&x| x >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dirichlet_concentrates_at_large_alpha() {
        let mut rng = RngStream::new(4, 0);
        let p = sample_dirichlet(&mut rng, &[1e6; 3]).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn dirichlet_mean_monte_carlo() {
        // E[p_i] = alpha_i / sum(alpha) = [0.25, 0.75]
        let mut rng = RngStream::new(5, 0);
        let n = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let p = sample_dirichlet(&mut rng, &[1.0, 3.0]).unwrap();
            acc[0] += p[0];
            acc[1] += p[1];
        }
        assert!((acc[0] / n as f64 - 0.25).abs() < 0.01);
        assert!((acc[1] / n as f64 - 0.75).abs() < 0.01);
    }

    #[test]
    fn dirichlet_rejects_nonpositive() {
        let mut rng = RngStream::new(5, 0);
        assert!(sample_dirichlet(&mut rng, &[1.0, 0.0]).is_err());
        assert!(sample_dirichlet(&mut rng, &[-1.0]).is_err());
    }
}
