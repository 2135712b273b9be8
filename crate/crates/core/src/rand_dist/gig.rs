//! Generalized inverse Gaussian variates.
//!
//! Density `f(u) ∝ u^(eta-1) exp(-(rho*u + chi/u)/2)`. Sampling works on the
//! standardized form `g(y) = y^(lambda-1) exp(-omega/2 (y + 1/y))` with
//! `lambda = |eta|`, `omega = sqrt(rho*chi)`, then rescales by `sqrt(chi/rho)`
//! (and inverts for negative `eta`). Three rejection samplers cover the
//! `(lambda, omega)` plane, following Hörmann and Leydold (2014):
//!
//! * ratio-of-uniforms with mode shift when `lambda > 2` or `omega > 3`;
//! * ratio-of-uniforms without shift when `lambda >= 1 - 2.25 omega^2` or `omega > 0.2`;
//! * a three-piece hat (constant, power, exponential) for small `omega` and `lambda < 1`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Method {
    ShiftedRou,
    Rou,
    PowerHat,
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    /// `chi == 0` or `omega` negligible: Gamma(eta, rate rho/2).
    Gamma(f64, f64),
    /// `omega` negligible with `eta < 0`: inverse Gamma(-eta, scale chi/2).
    InvGamma(f64, f64),
    Standard {
        lambda: f64,
        omega: f64,
        scale: f64,
        invert: bool,
        method: Method,
    },
}

/// Below this `omega` (and for `|eta| >= 1`) the gamma or inverse-gamma limit is used.
const GAMMA_LIMIT_OMEGA: f64 = 1e-8;

/// GIG(eta, rho, chi).
#[derive(Debug, Clone, Copy)]
pub struct Gig {
    eta: f64,
    rho: f64,
    chi: f64,
    kind: Kind,
}

impl Gig {
    pub fn new(eta: f64, rho: f64, chi: f64) -> Result<Self> {
        if !eta.is_finite() || !(rho > 0.0 && rho.is_finite()) || !(chi >= 0.0 && chi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "GIG requires finite eta, rho > 0, chi >= 0 (got {eta}, {rho}, {chi})"
            )));
        }
        if chi == 0.0 && eta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "GIG with chi = 0 needs eta > 0 (got {eta})"
            )));
        }
        let kind = if chi == 0.0 {
            Kind::Gamma(eta, rho / 2.0)
        } else {
            let omega = (rho * chi).sqrt();
            let scale = (chi / rho).sqrt();
            let lambda = eta.abs();
            // With lambda >= 1 the chi/u term only matters on a set of mass ~omega^(2 lambda).
            if omega == 0.0
                || !scale.is_finite()
                || scale == 0.0
                || (lambda >= 1.0 && omega < GAMMA_LIMIT_OMEGA)
            {
                if eta > 0.0 {
                    Kind::Gamma(eta, rho / 2.0)
                } else if eta < 0.0 {
                    Kind::InvGamma(-eta, chi / 2.0)
                } else {
                    return Err(Error::InvalidParameter(format!(
                        "GIG(0, {rho}, {chi}) is numerically degenerate"
                    )));
                }
            } else {
                let method = if lambda > 2.0 || omega > 3.0 {
                    Method::ShiftedRou
                } else if lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
                    Method::Rou
                } else {
                    Method::PowerHat
                };
                Kind::Standard {
                    lambda,
                    omega,
                    scale,
                    invert: eta < 0.0,
                    method,
                }
            }
        };
        Ok(Gig {
            eta,
            rho,
            chi,
            kind,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    /// Unnormalized log density at `u > 0`.
    pub fn ln_kernel(&self, u: f64) -> f64 {
        (self.eta - 1.0) * u.ln() - 0.5 * (self.rho * u + self.chi / u)
    }
}

fn standard_mode(lambda: f64, omega: f64) -> f64 {
    if lambda >= 1.0 {
        ((lambda - 1.0) + ((lambda - 1.0).powi(2) + omega * omega).sqrt()) / omega
    } else {
        omega / (((1.0 - lambda).powi(2) + omega * omega).sqrt() + (1.0 - lambda))
    }
}

#[inline]
fn ln_g(y: f64, lambda: f64, omega: f64) -> f64 {
    (lambda - 1.0) * y.ln() - 0.5 * omega * (y + 1.0 / y)
}

fn sample_shifted_rou<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let xm = standard_mode(lambda, omega);
    let h0 = ln_g(xm, lambda, omega);
    // Extremes of (y - xm) sqrt(g(y)) solve y^3 + a y^2 + b y + c = 0.
    let a = -(2.0 * (lambda + 1.0) / omega + xm);
    let b = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    let c = xm;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let arg = (-q / (2.0 * (-(p * p * p) / 27.0).sqrt())).clamp(-1.0, 1.0);
    let phi = arg.acos();
    let fak = 2.0 * (-p / 3.0).sqrt();
    let y_hi = fak * (phi / 3.0).cos() - a / 3.0;
    let y_lo = fak * (phi / 3.0 + 4.0 * std::f64::consts::PI / 3.0).cos() - a / 3.0;
    let u_hi = (y_hi - xm) * (0.5 * (ln_g(y_hi, lambda, omega) - h0)).exp();
    let u_lo = (y_lo - xm) * (0.5 * (ln_g(y_lo, lambda, omega) - h0)).exp();
    loop {
        let u = u_lo + rng.random::<f64>() * (u_hi - u_lo);
        let v: f64 = 1.0 - rng.random::<f64>();
        let y = u / v + xm;
        if y > 0.0 && 2.0 * v.ln() <= ln_g(y, lambda, omega) - h0 {
            return y;
        }
    }
}

fn sample_rou<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let xm = standard_mode(lambda, omega);
    let h0 = ln_g(xm, lambda, omega);
    let ym = ((lambda + 1.0) + ((lambda + 1.0).powi(2) + omega * omega).sqrt()) / omega;
    let vmax = ym * (0.5 * (ln_g(ym, lambda, omega) - h0)).exp();
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let v = rng.random::<f64>() * vmax;
        let y = v / u;
        if y > 0.0 && 2.0 * u.ln() <= ln_g(y, lambda, omega) - h0 {
            return y;
        }
    }
}

fn sample_power_hat<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    // Hat heights are stored relative to g(mode), which overflows for tiny omega.
    let xm = standard_mode(lambda, omega);
    let x0 = omega / (1.0 - lambda);
    let h0 = ln_g(xm, lambda, omega);
    let area0 = x0;
    let (k1, area1, k2, area2) = if x0 >= 2.0 / omega {
        let k2 = ((lambda - 1.0) * x0.ln() - h0).exp();
        (0.0, 0.0, k2, k2 * 2.0 * (-omega * x0 / 2.0).exp() / omega)
    } else {
        let k1 = (-omega - h0).exp();
        let area1 = if lambda == 0.0 {
            k1 * (2.0 / (omega * omega)).ln()
        } else {
            k1 / lambda * ((2.0 / omega).powf(lambda) - x0.powf(lambda))
        };
        let k2 = ((lambda - 1.0) * (2.0 / omega).ln() - h0).exp();
        (k1, area1, k2, k2 * 2.0 * (-1.0f64).exp() / omega)
    };
    let total = area0 + area1 + area2;
    let tail_start = x0.max(2.0 / omega);
    loop {
        let mut v = total * rng.random::<f64>();
        let (y, ln_hat) = if v <= area0 {
            (x0 * v / area0, 0.0)
        } else {
            v -= area0;
            if v <= area1 {
                let y = if lambda == 0.0 {
                    x0 * (v / k1).exp()
                } else {
                    (x0.powf(lambda) + lambda / k1 * v).powf(1.0 / lambda)
                };
                (y, k1.ln() + (lambda - 1.0) * y.ln())
            } else {
                v -= area1;
                let inner = (-omega / 2.0 * tail_start).exp() - omega / (2.0 * k2) * v;
                let y = -2.0 / omega * inner.max(f64::MIN_POSITIVE).ln();
                (y, k2.ln() - omega / 2.0 * y)
            }
        };
        if y <= 0.0 || !y.is_finite() {
            continue;
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        if u.ln() + ln_hat <= ln_g(y, lambda, omega) - h0 {
            return y;
        }
    }
}

impl Distribution<f64> for Gig {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            Kind::Gamma(shape, rate) => Gamma::new(shape, 1.0 / rate)
                .expect("validated gamma parameters")
                .sample(rng),
            Kind::InvGamma(shape, scale) => {
                scale
                    / Gamma::new(shape, 1.0)
                        .expect("validated gamma parameters")
                        .sample(rng)
            }
            Kind::Standard {
                lambda,
                omega,
                scale,
                invert,
                method,
            } => {
                let y = match method {
                    Method::ShiftedRou => sample_shifted_rou(lambda, omega, rng),
                    Method::Rou => sample_rou(lambda, omega, rng),
                    Method::PowerHat => sample_power_hat(lambda, omega, rng),
                };
                if invert {
                    scale / y
                } else {
                    scale * y
                }
            }
        }
    }
}

/// One GIG(eta, rho, chi) draw.
pub fn sample_gig<R: Rng + ?Sized>(eta: f64, rho: f64, chi: f64, rng: &mut R) -> Result<f64> {
    Ok(Gig::new(eta, rho, chi)?.sample(rng))
}
