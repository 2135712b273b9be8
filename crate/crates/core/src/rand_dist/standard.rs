//! Normal, gamma, beta, exponential, Dirichlet, multinomial and discrete draws.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp, Gamma, StandardNormal};

use crate::error::{Error, Result};

fn invalid(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> Result<f64> {
    if !mean.is_finite() || !(sd >= 0.0 && sd.is_finite()) {
        return Err(invalid(format!("normal({mean}, {sd})")));
    }
    Ok(mean + sd * standard_normal(rng))
}

/// Gamma with shape and *rate*.
pub fn gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
        return Err(invalid(format!("gamma(shape {shape}, rate {rate})")));
    }
    Ok(Gamma::new(shape, 1.0 / rate)
        .map_err(|e| invalid(e.to_string()))?
        .sample(rng))
}

/// Inverse gamma with shape and scale: `scale / Gamma(shape, 1)`.
pub fn inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(invalid(format!("inverse gamma scale {scale}")));
    }
    Ok(scale / gamma(shape, 1.0, rng)?)
}

pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let x = gamma(a, 1.0, rng)?;
    let y = gamma(b, 1.0, rng)?;
    let s = x + y;
    if s > 0.0 {
        Ok(x / s)
    } else {
        // Both gammas underflowed (tiny shapes); fall back to the limiting Bernoulli mean.
        Ok(if rng.random::<f64>() < a / (a + b) {
            1.0
        } else {
            0.0
        })
    }
}

pub fn exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(invalid(format!("exponential rate {rate}")));
    }
    Ok(Exp::new(rate)
        .map_err(|e| invalid(e.to_string()))?
        .sample(rng))
}

/// Dirichlet draw by normalizing independent gammas.
pub fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.len() < 2 {
        return Err(invalid("Dirichlet needs at least two components".into()));
    }
    let mut out = alpha
        .iter()
        .map(|&a| gamma(a, 1.0, rng))
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|x| *x /= total);
    } else {
        let k = rng.random_range(0..out.len());
        out.iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = if i == k { 1.0 } else { 0.0 });
    }
    Ok(out)
}

/// Multinomial draw by sequential binomial splits.
pub fn multinomial<R: Rng + ?Sized>(total: u64, probs: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(invalid(
            "multinomial probabilities must be finite and nonnegative".into(),
        ));
    }
    let mass: f64 = probs.iter().sum();
    if !(mass > 0.0) {
        return Err(invalid("multinomial probabilities sum to zero".into()));
    }
    let mut out = vec![0u64; probs.len()];
    let mut remaining = total;
    let mut rest = mass;
    let last = probs.len() - 1;
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k == last {
            out[k] = remaining;
            break;
        }
        let q = if rest > 0.0 {
            (p / rest).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let x = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q)
                .map_err(|e| invalid(e.to_string()))?
                .sample(rng)
        };
        out[k] = x;
        remaining -= x;
        rest -= p;
    }
    Ok(out)
}

/// Uniform draw from `0..n`.
pub fn discrete_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<usize> {
    if n == 0 {
        return Err(invalid("discrete uniform over an empty range".into()));
    }
    Ok(rng.random_range(0..n))
}

/// Index drawn with probability proportional to `exp(log_weights)`.
pub fn categorical_log<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(invalid(
            "categorical log-weights have no finite maximum".into(),
        ));
    }
    let weights: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return Ok(i);
        }
        u -= w;
    }
    Ok(weights.iter().rposition(|w| *w > 0.0).unwrap_or(0))
}

/// Bernoulli draw from log-weights of the two outcomes, stabilized by max subtraction.
pub fn bernoulli_log<R: Rng + ?Sized>(log_w0: f64, log_w1: f64, rng: &mut R) -> bool {
    let m = log_w0.max(log_w1);
    let w0 = (log_w0 - m).exp();
    let w1 = (log_w1 - m).exp();
    rng.random::<f64>() * (w0 + w1) < w1
}
