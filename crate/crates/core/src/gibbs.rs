//! Full-conditional updates and the sweep that chains them with HMC.
//!
//! Sweep order: theta (HMC), mu, Lambda, Dirichlet-Laplace scales, factor scores,
//! random effects, fixed effects with their inclusion indicators and
//! probabilities, then the variances.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::config::Variant;
use crate::error::{Error, Result};
use crate::hmc::{hmc_step, ThetaTarget};
use crate::model::Model;
use crate::rand_dist::{
    bernoulli_log, beta, categorical_log, gamma, inverse_gamma, sample_gig,
    sample_inverse_gaussian, standard_normal, RngStream,
};
use crate::state::{MarkovState, XI_FLOOR};

/// Floor on `|lambda_kl|` inside the GIG and inverse-Gaussian parameters.
pub const LAMBDA_FLOOR: f64 = 1e-280;
/// Floor on the prior variances `psi xi^2 tau^2` of the loadings.
pub const LOADING_VAR_FLOOR: f64 = 1e-280;

fn cholesky_with_jitter(precision: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(precision.clone()) {
        return Ok(c);
    }
    let n = precision.nrows();
    let jittered = precision + DMatrix::identity(n, n) * 1e-8;
    Cholesky::new(jittered).ok_or_else(|| {
        Error::Numerical(format!("{what}: precision matrix is not positive definite"))
    })
}

/// Draws from `N(P^-1 rhs, P^-1)` given the factor `P = L L'`.
fn draw_from_factor<R: Rng + ?Sized>(
    chol: &Cholesky<f64, Dyn>,
    rhs: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let mean = chol.solve(rhs);
    let z = DVector::from_fn(rhs.len(), |_, _| standard_normal(rng));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    mean + noise
}

/// Per-sample HMC update of `theta`, run in parallel over samples with one stream each.
pub fn update_theta(
    state: &mut MarkovState,
    model: &Model,
    epsilon: &[f64],
    n_steps: usize,
    streams: &mut [RngStream],
) -> Vec<bool> {
    let k = model.n_taxa();
    let lf = state.lambda_f(model);
    let precision: Vec<f64> = state.sigma_sq.iter().map(|s| 1.0 / s).collect();
    let mu = &state.mu;
    let mut rows: Vec<Vec<f64>> = state
        .theta
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    let accepted: Vec<bool> = rows
        .par_iter_mut()
        .zip(streams.par_iter_mut())
        .enumerate()
        .map(|(i, (theta, rng))| {
            let counts: Vec<f64> = model.y.row(i).iter().copied().collect();
            let mean: Vec<f64> = (0..k).map(|j| mu[j] + lf[(i, j)]).collect();
            let target = ThetaTarget::new(&counts, &mean, &precision).expect("dimensions agree");
            hmc_step(theta, &target, epsilon[i], n_steps, rng)
        })
        .collect();
    for (i, row) in rows.iter().enumerate() {
        for j in 0..k {
            state.theta[(i, j)] = row[j];
        }
    }
    accepted
}

fn mu_moments(state: &MarkovState, lf: &DMatrix<f64>, j: usize) -> (f64, f64) {
    let n = state.theta.nrows();
    let s2 = state.sigma_sq[j];
    let precision = n as f64 / s2 + 1.0 / state.sigma_mu_sq;
    let sum: f64 = (0..n).map(|i| state.theta[(i, j)] - lf[(i, j)]).sum();
    (sum / s2 / precision, precision)
}

/// Mean and precision of `mu_k` given everything else.
pub fn mu_conditional(state: &MarkovState, model: &Model, k: usize) -> (f64, f64) {
    mu_moments(state, &state.lambda_f(model), k)
}

pub fn update_mu<R: Rng + ?Sized>(state: &mut MarkovState, model: &Model, rng: &mut R) {
    let lf = state.lambda_f(model);
    for j in 0..model.n_taxa() {
        let (mean, precision) = mu_moments(state, &lf, j);
        state.mu[j] = mean + standard_normal(rng) / precision.sqrt();
    }
}

fn lambda_row_system_with(
    state: &MarkovState,
    ftf: &DMatrix<f64>,
    j: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let inv_s2 = 1.0 / state.sigma_sq[j];
    let mut precision = ftf * inv_s2;
    for c in 0..ftf.nrows() {
        let v = state.psi[(j, c)] * (state.xi[(j, c)] * state.tau[c]).powi(2);
        precision[(c, c)] += 1.0 / v.max(LOADING_VAR_FLOOR);
    }
    let resid = state.theta.column(j).add_scalar(-state.mu[j]) * inv_s2;
    (precision, state.f.transpose() * resid)
}

/// Precision `sigma_k^-2 F'F + Psi_k^-1` and right-hand side `F'R_k` of loading row `k`.
pub fn lambda_row_system(state: &MarkovState, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    lambda_row_system_with(state, &(state.f.transpose() * &state.f), k)
}

/// Row-wise update of the loadings.
pub fn update_lambda<R: Rng + ?Sized>(
    state: &mut MarkovState,
    model: &Model,
    rng: &mut R,
) -> Result<()> {
    if model.variant() == Variant::NoFactors {
        return Ok(());
    }
    let l = model.n_factors();
    let ftf = state.f.transpose() * &state.f;
    for j in 0..model.n_taxa() {
        let (precision, rhs) = lambda_row_system_with(state, &ftf, j);
        let chol = cholesky_with_jitter(precision, "loadings")?;
        let row = draw_from_factor(&chol, &rhs, rng);
        for c in 0..l {
            state.lambda[(j, c)] = row[c];
        }
    }
    Ok(())
}

/// Log conditional weight of concentration `a` given one column's `xi`, `tau` and `nu`,
/// dropping terms that do not depend on `a`.
pub(crate) fn concentration_log_weight(
    a: f64,
    k: usize,
    sum_log_xi: f64,
    tau: f64,
    nu: f64,
) -> f64 {
    let kf = k as f64;
    -kf * ln_gamma(a) + (a - 1.0) * sum_log_xi + kf * a * nu.ln() + (kf * a - 1.0) * tau.ln()
}

/// Inverse-Gaussian mean of `1 / psi_kl`, `xi_kl tau_l / |lambda_kl|`, kept finite and positive.
pub fn local_scale_mean(xi: f64, tau: f64, lambda: f64) -> f64 {
    (xi * tau / lambda.abs().max(LAMBDA_FLOOR)).clamp(f64::MIN_POSITIVE, f64::MAX)
}

/// Dirichlet-Laplace block: per column `xi` (with `tau` and `psi` integrated out), then
/// `tau` (with `psi` integrated out), then `psi`; afterwards `nu` and the concentrations.
pub fn update_dl_scales<R: Rng + ?Sized>(
    state: &mut MarkovState,
    model: &Model,
    rng: &mut R,
) -> Result<()> {
    if model.variant() == Variant::NoFactors {
        return Ok(());
    }
    let k = model.n_taxa();
    let kf = k as f64;
    let mut t = vec![0.0; k];
    for c in 0..model.n_factors() {
        let a = state.a[c];
        for j in 0..k {
            let abs = state.lambda[(j, c)].abs().max(LAMBDA_FLOOR);
            t[j] = sample_gig(a - 1.0, 2.0 * state.nu, 2.0 * abs, rng)?.max(XI_FLOOR);
        }
        let total: f64 = t.iter().sum();
        for j in 0..k {
            state.xi[(j, c)] = t[j] / total;
        }

        let chi: f64 = (0..k)
            .map(|j| state.lambda[(j, c)].abs().max(LAMBDA_FLOOR) / state.xi[(j, c)].max(XI_FLOOR))
            .sum::<f64>()
            * 2.0;
        state.tau[c] = sample_gig(kf * a - kf, 2.0 * state.nu, chi.min(f64::MAX), rng)?;

        for j in 0..k {
            let mean = local_scale_mean(state.xi[(j, c)], state.tau[c], state.lambda[(j, c)]);
            state.psi[(j, c)] = 1.0 / sample_inverse_gaussian(mean, 1.0, rng)?;
        }
    }

    let pr = model.priors();
    state.nu = gamma(pr.c0 + kf * state.a.sum(), pr.d0 + state.tau.sum(), rng)?;

    let grid = model.a_grid();
    let mut weights = vec![0.0; grid.len()];
    for c in 0..model.n_factors() {
        let sum_log_xi: f64 = state
            .xi
            .column(c)
            .iter()
            .map(|x| x.max(XI_FLOOR).ln())
            .sum();
        for (w, &a) in weights.iter_mut().zip(grid) {
            *w = concentration_log_weight(a, k, sum_log_xi, state.tau[c], state.nu);
        }
        state.a[c] = grid[categorical_log(&weights, rng)?];
    }
    Ok(())
}

/// Shared precision `Lambda' Sigma^-1 Lambda + I` and the `L x n` right-hand sides
/// `Lambda' Sigma^-1 (theta_i - mu) + b~ x_i + g_{z_i}` of the factor scores.
pub fn factor_score_system(state: &MarkovState, model: &Model) -> (DMatrix<f64>, DMatrix<f64>) {
    let (k, l) = (model.n_taxa(), model.n_factors());
    let mut weighted = state.lambda.clone();
    for j in 0..k {
        weighted.row_mut(j).scale_mut(1.0 / state.sigma_sq[j]);
    }
    let precision = weighted.transpose() * &state.lambda + DMatrix::identity(l, l);
    let mut centred = state.theta.clone();
    for j in 0..k {
        centred.column_mut(j).add_scalar_mut(-state.mu[j]);
    }
    let rhs =
        weighted.transpose() * centred.transpose() + state.factor_prior_mean(model).transpose();
    (precision, rhs)
}

/// `f_i ~ N(Sigma_f [Lambda' Sigma^-1 (theta_i - mu) + prior mean], Sigma_f)` with
/// `Sigma_f^-1 = Lambda' Sigma^-1 Lambda + I`, factorized once per sweep.
pub fn update_factor_scores<R: Rng + ?Sized>(
    state: &mut MarkovState,
    model: &Model,
    rng: &mut R,
) -> Result<()> {
    if model.variant() == Variant::NoFactors {
        state.f = state.factor_prior_mean(model);
        return Ok(());
    }
    let (n, l) = (model.n_samples(), model.n_factors());
    let (precision, rhs) = factor_score_system(state, model);
    let chol = cholesky_with_jitter(precision, "factor scores")?;
    let mean = chol.solve(&rhs);
    let z = DMatrix::from_fn(l, n, |_, _| standard_normal(rng));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    state.f = (mean + noise).transpose();
    Ok(())
}

/// Response and per-slot weights seen by the random and fixed effects: the factor
/// scores with unit weight, or for the no-factors variant `theta - mu` weighted by
/// `sigma_k^-2`.
fn latent_response(state: &MarkovState, model: &Model) -> (DMatrix<f64>, Vec<f64>) {
    match model.variant() {
        Variant::Factors => (state.f.clone(), vec![1.0; model.n_factors()]),
        Variant::NoFactors => {
            let mut r = state.theta.clone();
            for j in 0..model.n_taxa() {
                r.column_mut(j).add_scalar_mut(-state.mu[j]);
            }
            (r, state.sigma_sq.iter().map(|s| 1.0 / s).collect())
        }
    }
}

struct BlockSystem {
    response: DMatrix<f64>,
    weight: Vec<f64>,
    fixed: DMatrix<f64>,
}

impl BlockSystem {
    fn new(state: &MarkovState, model: &Model) -> Self {
        let (response, weight) = latent_response(state, model);
        BlockSystem {
            response,
            weight,
            fixed: state.fixed_part(model),
        }
    }

    fn moments(
        &self,
        state: &MarkovState,
        others: &DMatrix<f64>,
        members: &[usize],
        r: usize,
        c: usize,
    ) -> (f64, f64) {
        let sum: f64 = members
            .iter()
            .map(|&i| self.response[(i, c)] - self.fixed[(i, c)] - others[(i, c)])
            .sum();
        let precision = members.len() as f64 * self.weight[c] + 1.0 / state.sigma_g_sq[r];
        (self.weight[c] * sum / precision, precision)
    }
}

/// Mean and precision of `g_{r,block,l}` (level `r`) given everything else.
pub fn random_effect_conditional(
    state: &MarkovState,
    model: &Model,
    r: usize,
    block: usize,
    l: usize,
) -> (f64, f64) {
    let system = BlockSystem::new(state, model);
    let others = state.random_effect_sum(model, Some(r));
    system.moments(state, &others, &model.levels()[r].members[block], r, l)
}

/// Block effects level by level, each against the residual left by the fixed part
/// and the other levels.
pub fn update_random_effects<R: Rng + ?Sized>(state: &mut MarkovState, model: &Model, rng: &mut R) {
    let system = BlockSystem::new(state, model);
    for (r, level) in model.levels().iter().enumerate() {
        let others = state.random_effect_sum(model, Some(r));
        for (block, members) in level.members.iter().enumerate() {
            for c in 0..model.n_factors() {
                let (mean, precision) = system.moments(state, &others, members, r, c);
                state.g[r][(block, c)] = mean + standard_normal(rng) / precision.sqrt();
            }
        }
    }
    if model.variant() == Variant::NoFactors {
        state.f = state.factor_prior_mean(model);
    }
}

/// Log weights of `omega_jl = 0` and `omega_jl = 1`, up to a shared constant.
fn inclusion_log_weights(
    state: &MarkovState,
    model: &Model,
    xt_target: &DMatrix<f64>,
    w: f64,
    c: usize,
    j: usize,
) -> (f64, f64) {
    let bj = state.b[(c, j)];
    // sum_i x_ij d_il^{\j} through the cross-products of X.
    let mut cross = xt_target[(j, c)];
    for jj in 0..model.n_covariates() {
        if jj != j && state.omega[(c, jj)] {
            cross -= model.xtx[(j, jj)] * state.b[(c, jj)];
        }
    }
    let pj = state.pi[j];
    let log_w1 = pj.ln() + w * (bj * cross - 0.5 * bj * bj * model.xtx[(j, j)]);
    ((1.0 - pj).ln(), log_w1)
}

/// `Pr(omega_jl = 1 | ...)` at the current state.
pub fn inclusion_probability(state: &MarkovState, model: &Model, l: usize, j: usize) -> f64 {
    let (response, weight) = latent_response(state, model);
    let target = response - state.random_effect_sum(model, None);
    let xt_target = model.x.transpose() * &target;
    let (log_w0, log_w1) = inclusion_log_weights(state, model, &xt_target, weight[l], l, j);
    1.0 / (1.0 + (log_w0 - log_w1).exp())
}

/// Beta parameters `(a0 + S_j, b0 + L - S_j)` of `pi_j`, where `S_j` counts the active slots.
pub fn inclusion_posterior(state: &MarkovState, model: &Model, j: usize) -> (f64, f64) {
    let pr = model.priors();
    let s = state.omega.column(j).iter().filter(|w| **w).count() as f64;
    (pr.a0 + s, pr.b0 + model.n_factors() as f64 - s)
}

/// Fixed effects per slot `l`: `b_l` given the inclusion pattern, then each `omega_jl`
/// from its two-point conditional, then the inclusion probabilities.
pub fn update_fixed_effects<R: Rng + ?Sized>(
    state: &mut MarkovState,
    model: &Model,
    rng: &mut R,
) -> Result<()> {
    let (response, weight) = latent_response(state, model);
    let target = response - state.random_effect_sum(model, None);
    let p = model.n_covariates();
    let xt_target = model.x.transpose() * &target;
    let inv_var = 1.0 / state.sigma_b_sq;
    for c in 0..model.n_factors() {
        let w = weight[c];
        let mut precision = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for j in 0..p {
            precision[(j, j)] = inv_var;
            if !state.omega[(c, j)] {
                continue;
            }
            rhs[j] = w * xt_target[(j, c)];
            for jj in 0..p {
                if state.omega[(c, jj)] {
                    precision[(j, jj)] += w * model.xtx[(j, jj)];
                }
            }
        }
        let chol = cholesky_with_jitter(precision, "fixed effects")?;
        let draw = draw_from_factor(&chol, &rhs, rng);
        for j in 0..p {
            state.b[(c, j)] = draw[j];
        }

        for j in 0..p {
            let (log_w0, log_w1) = inclusion_log_weights(state, model, &xt_target, w, c, j);
            state.omega[(c, j)] = bernoulli_log(log_w0, log_w1, rng);
        }
    }

    for j in 0..p {
        let (a, b) = inclusion_posterior(state, model, j);
        state.pi[j] = beta(a, b, rng)?.clamp(1e-300, 1.0 - 1e-16);
    }
    if model.variant() == Variant::NoFactors {
        state.f = state.factor_prior_mean(model);
    }
    Ok(())
}

fn residual_variance_with(
    state: &MarkovState,
    model: &Model,
    lf: &DMatrix<f64>,
    k: usize,
) -> (f64, f64) {
    let pr = model.priors();
    let n = model.n_samples();
    let ss: f64 = (0..n)
        .map(|i| (state.theta[(i, k)] - state.mu[k] - lf[(i, k)]).powi(2))
        .sum();
    (pr.u0 + 0.5 * n as f64, pr.v0 + 0.5 * ss)
}

/// Inverse-gamma shape and scale of `sigma_k^2`.
pub fn residual_variance_posterior(state: &MarkovState, model: &Model, k: usize) -> (f64, f64) {
    residual_variance_with(state, model, &state.lambda_f(model), k)
}

/// Inverse-gamma shape and scale of `sigma_b^2`: `u0 + sum(omega)/2` and `v0 + sum(b~^2)/2`.
///
/// Only the active effects enter. The inactive `b_jl` are integrated out here and
/// redrawn from their prior by the next fixed-effect update, before any indicator
/// update reads them.
pub fn fixed_effect_variance_posterior(state: &MarkovState, model: &Model) -> (f64, f64) {
    let pr = model.priors();
    let active = state.omega.iter().filter(|w| **w).count() as f64;
    (
        pr.u0 + 0.5 * active,
        pr.v0 + 0.5 * state.b_tilde().norm_squared(),
    )
}

pub fn update_variances<R: Rng + ?Sized>(
    state: &mut MarkovState,
    model: &Model,
    rng: &mut R,
) -> Result<()> {
    let pr = model.priors();
    let lf = state.lambda_f(model);
    for j in 0..model.n_taxa() {
        let (shape, scale) = residual_variance_with(state, model, &lf, j);
        state.sigma_sq[j] = inverse_gamma(shape, scale, rng)?;
    }
    let k = model.n_taxa() as f64;
    state.sigma_mu_sq = inverse_gamma(pr.u0 + 0.5 * k, pr.v0 + 0.5 * state.mu.norm_squared(), rng)?;
    for (r, g) in state.g.iter().enumerate() {
        state.sigma_g_sq[r] = inverse_gamma(
            pr.u0 + 0.5 * g.len() as f64,
            pr.v0 + 0.5 * g.norm_squared(),
            rng,
        )?;
    }
    let (shape, scale) = fixed_effect_variance_posterior(state, model);
    state.sigma_b_sq = inverse_gamma(shape, scale, rng)?;
    Ok(())
}

/// Random streams for one chain: site 0 drives the Gibbs updates and site `1 + i` the HMC
/// update of sample `i`.
#[derive(Debug, Clone)]
pub struct SweepStreams {
    pub gibbs: RngStream,
    pub hmc: Vec<RngStream>,
}

impl SweepStreams {
    pub fn new(seed: u64, chain: u64, n_samples: usize) -> Self {
        SweepStreams {
            gibbs: RngStream::new(seed, chain, 0),
            hmc: (0..n_samples)
                .map(|i| RngStream::new(seed, chain, 1 + i as u64))
                .collect(),
        }
    }
}

/// One full sweep. Returns the per-sample HMC acceptance flags.
pub fn sweep(
    state: &mut MarkovState,
    model: &Model,
    epsilon: &[f64],
    n_steps: usize,
    streams: &mut SweepStreams,
) -> Result<Vec<bool>> {
    let accepted = update_theta(state, model, epsilon, n_steps, &mut streams.hmc);
    let rng = &mut streams.gibbs;
    update_mu(state, model, rng);
    update_lambda(state, model, rng)?;
    update_dl_scales(state, model, rng)?;
    update_factor_scores(state, model, rng)?;
    update_random_effects(state, model, rng);
    update_fixed_effects(state, model, rng)?;
    update_variances(state, model, rng)?;
    state.validate(model)?;
    Ok(accepted)
}
