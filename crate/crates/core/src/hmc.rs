//! Hamiltonian Monte Carlo for one sample's log-ratio vector.

use nalgebra::DMatrix;
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rand_dist::standard_normal;

/// Leapfrog tuning and the acceptance band used during burn-in adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcSettings {
    pub epsilon: f64,
    pub n_steps: usize,
    pub accept_low: f64,
    pub accept_high: f64,
    pub adapt_window: usize,
}

impl HmcSettings {
    pub fn from_config(config: &ModelConfig) -> Self {
        HmcSettings {
            epsilon: config.hmc_epsilon,
            n_steps: config.hmc_steps,
            accept_low: config.accept_low,
            accept_high: config.accept_high,
            adapt_window: config.adapt_window,
        }
    }
}

impl Default for HmcSettings {
    fn default() -> Self {
        HmcSettings::from_config(&ModelConfig::default())
    }
}

/// Multiplies or divides the step size by 1.1 when the window acceptance rate
/// leaves the band; otherwise returns the settings unchanged.
pub fn adapt_epsilon(acceptance_rate: f64, settings: &HmcSettings) -> HmcSettings {
    let mut next = *settings;
    if acceptance_rate > settings.accept_high {
        next.epsilon *= 1.1;
    } else if acceptance_rate < settings.accept_low {
        next.epsilon /= 1.1;
    }
    next
}

/// The conditional target of `theta_i` given everything else.
///
/// `prior_mean` is `mu + Lambda f_i` and `precision` holds `1 / sigma_k^2`.
#[derive(Debug, Clone, Copy)]
pub struct ThetaTarget<'a> {
    counts: &'a [f64],
    total: f64,
    prior_mean: &'a [f64],
    precision: &'a [f64],
}

impl<'a> ThetaTarget<'a> {
    pub fn new(counts: &'a [f64], prior_mean: &'a [f64], precision: &'a [f64]) -> Result<Self> {
        let k = counts.len();
        if prior_mean.len() != k || precision.len() != k {
            return Err(Error::Dimension(format!(
                "theta target: {} counts, {} prior means, {} precisions",
                k,
                prior_mean.len(),
                precision.len()
            )));
        }
        Ok(ThetaTarget {
            counts,
            total: counts.iter().sum(),
            prior_mean,
            precision,
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Potential energy `U(u)`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum_exp = 0.0;
        let mut value = 0.0;
        for k in 0..u.len() {
            sum_exp += (u[k] - max).exp();
            let r = u[k] - self.prior_mean[k];
            value += -self.counts[k] * u[k] + 0.5 * self.precision[k] * r * r;
        }
        value + self.total * (max + sum_exp.ln())
    }

    /// Writes `grad U(u)` into `grad`.
    pub fn gradient(&self, u: &[f64], grad: &mut [f64]) {
        let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum_exp = 0.0;
        for (g, &x) in grad.iter_mut().zip(u) {
            *g = (x - max).exp();
            sum_exp += *g;
        }
        let scale = self.total / sum_exp;
        for k in 0..u.len() {
            grad[k] =
                -self.counts[k] + scale * grad[k] + self.precision[k] * (u[k] - self.prior_mean[k]);
        }
    }
}

fn check_dims(
    theta: &[f64],
    y: &[f64],
    mu: &[f64],
    lambda: &DMatrix<f64>,
    f: &[f64],
    sigma_sq: &[f64],
) -> Result<()> {
    let k = theta.len();
    if y.len() != k
        || mu.len() != k
        || sigma_sq.len() != k
        || lambda.nrows() != k
        || lambda.ncols() != f.len()
    {
        return Err(Error::Dimension(format!(
            "theta {k}, counts {}, mu {}, Lambda {}x{}, f {}, sigma^2 {}",
            y.len(),
            mu.len(),
            lambda.nrows(),
            lambda.ncols(),
            f.len(),
            sigma_sq.len()
        )));
    }
    if sigma_sq.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidParameter(
            "residual variances must be positive".into(),
        ));
    }
    Ok(())
}

fn prior_terms(
    mu: &[f64],
    lambda: &DMatrix<f64>,
    f: &[f64],
    sigma_sq: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mean = (0..mu.len())
        .map(|k| mu[k] + (0..f.len()).map(|l| lambda[(k, l)] * f[l]).sum::<f64>())
        .collect();
    let precision = sigma_sq.iter().map(|s| 1.0 / s).collect();
    (mean, precision)
}

/// `-Y'theta + m log sum exp(theta) + 0.5 sum sigma_k^-2 (theta_k - mu_k - lambda_k'f)^2`.
pub fn neg_log_posterior_theta(
    theta: &[f64],
    y: &[f64],
    m: f64,
    mu: &[f64],
    lambda: &DMatrix<f64>,
    f: &[f64],
    sigma_sq: &[f64],
) -> Result<f64> {
    check_dims(theta, y, mu, lambda, f, sigma_sq)?;
    let (mean, precision) = prior_terms(mu, lambda, f, sigma_sq);
    let target = ThetaTarget {
        counts: y,
        total: m,
        prior_mean: &mean,
        precision: &precision,
    };
    Ok(target.energy(theta))
}

/// `-Y + m phi(theta) + Sigma^-1 (theta - mu - Lambda f)`.
pub fn grad_neg_log_posterior_theta(
    theta: &[f64],
    y: &[f64],
    m: f64,
    mu: &[f64],
    lambda: &DMatrix<f64>,
    f: &[f64],
    sigma_sq: &[f64],
) -> Result<Vec<f64>> {
    check_dims(theta, y, mu, lambda, f, sigma_sq)?;
    let (mean, precision) = prior_terms(mu, lambda, f, sigma_sq);
    let target = ThetaTarget {
        counts: y,
        total: m,
        prior_mean: &mean,
        precision: &precision,
    };
    let mut grad = vec![0.0; theta.len()];
    target.gradient(theta, &mut grad);
    Ok(grad)
}

/// One HMC transition with identity mass matrix. Updates `theta` in place and
/// reports whether the proposal was accepted. Non-finite proposals are rejected.
pub fn hmc_step<R: Rng + ?Sized>(
    theta: &mut [f64],
    target: &ThetaTarget<'_>,
    epsilon: f64,
    n_steps: usize,
    rng: &mut R,
) -> bool {
    let k = theta.len();
    let mut u = theta.to_vec();
    let mut v: Vec<f64> = (0..k).map(|_| standard_normal(rng)).collect();
    let mut grad = vec![0.0; k];

    let current_h = target.energy(&u) + 0.5 * v.iter().map(|x| x * x).sum::<f64>();

    target.gradient(&u, &mut grad);
    for (vi, gi) in v.iter_mut().zip(&grad) {
        *vi -= 0.5 * epsilon * gi;
    }
    for _ in 1..n_steps {
        for (ui, vi) in u.iter_mut().zip(&v) {
            *ui += epsilon * vi;
        }
        target.gradient(&u, &mut grad);
        for (vi, gi) in v.iter_mut().zip(&grad) {
            *vi -= epsilon * gi;
        }
    }
    for (ui, vi) in u.iter_mut().zip(&v) {
        *ui += epsilon * vi;
    }
    target.gradient(&u, &mut grad);
    for (vi, gi) in v.iter_mut().zip(&grad) {
        *vi = -(*vi - 0.5 * epsilon * gi);
    }

    let proposed_h = target.energy(&u) + 0.5 * v.iter().map(|x| x * x).sum::<f64>();
    if !proposed_h.is_finite() || u.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let log_accept = current_h - proposed_h;
    if log_accept >= 0.0 || rng.random::<f64>().ln() < log_accept {
        theta.copy_from_slice(&u);
        true
    } else {
        false
    }
}
