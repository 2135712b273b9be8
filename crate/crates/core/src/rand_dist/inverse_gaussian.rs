use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Inverse Gaussian with mean `mu` and shape `lambda`.
///
/// Uses the transformation-with-multiple-roots method of Michael, Schucany and
/// Haas, with the smaller root written as `mu / (1 + w + sqrt(w^2 + 2w))` so that
/// very large means do not cancel catastrophically.
#[derive(Debug, Clone, Copy)]
pub struct InverseGaussian {
    mu: f64,
    lambda: f64,
}

impl InverseGaussian {
    pub fn new(mu: f64, lambda: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) || !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "inverse Gaussian needs positive finite mean and shape (got {mu}, {lambda})"
            )));
        }
        Ok(InverseGaussian { mu, lambda })
    }
}

impl Distribution<f64> for InverseGaussian {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let w = self.mu * z * z / (2.0 * self.lambda);
        let x = self.mu / (1.0 + w + (w * w + 2.0 * w).sqrt());
        let u: f64 = rng.random();
        if u * (self.mu + x) <= self.mu {
            x
        } else {
            self.mu * (self.mu / x)
        }
    }
}

pub fn sample_inverse_gaussian<R: Rng + ?Sized>(mu: f64, lambda: f64, rng: &mut R) -> Result<f64> {
    Ok(InverseGaussian::new(mu, lambda)?.sample(rng))
}
