//! Sampler-correctness checks: every conditional against an independent oracle,
//! prior reproduction of the full kernel, and the HMC building blocks.
//!
//! Each check returns a one-line summary on success and a diagnostic on failure so
//! that both the unit-test wrappers and the acceptance runner can report it.

#![allow(dead_code)]

use mimix::config::{ModelConfig, Variant};
use mimix::gibbs::{
    factor_score_system, fixed_effect_variance_posterior, inclusion_posterior,
    inclusion_probability, lambda_row_system, local_scale_mean, mu_conditional,
    random_effect_conditional, residual_variance_posterior, sweep, update_dl_scales,
    update_factor_scores, update_lambda, update_mu, update_random_effects, update_variances,
    SweepStreams,
};
use mimix::hmc::{grad_neg_log_posterior_theta, hmc_step, ThetaTarget};
use mimix::rand_dist::{standard_normal, RngStream};
use mimix::state::{simulate_counts, MarkovState};
use mimix::Model;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub type Check = fn() -> Result<String, String>;

/// All checks in reporting order.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        (
            "gradient vs central differences",
            gradient_matches_finite_differences as Check,
        ),
        ("hmc gaussian-target moments", hmc_gaussian_moments),
        ("mu precision", mu_precision_example),
        ("mu prior-only", mu_without_samples_is_prior),
        ("mu conditional vs quadrature", mu_matches_quadrature),
        ("Lambda with zero scores", lambda_prior_when_scores_vanish),
        ("Lambda scalar case", lambda_scalar_case),
        ("Lambda vs dense solve", lambda_matches_dense_solve),
        ("DL inverse-Gaussian mean", dl_local_scale_mean),
        ("DL exchangeable weights", dl_exchangeable_weights),
        (
            "DL global scale vs importance sampler",
            dl_matches_importance_sampler,
        ),
        (
            "factor scores with zero loadings",
            factor_scores_prior_when_loadings_vanish,
        ),
        ("factor score precision", factor_score_precision_example),
        (
            "factor scores vs dense solve",
            factor_scores_match_dense_solve,
        ),
        ("random effect empty block", random_effect_empty_block),
        ("random effect precision", random_effect_precision_example),
        (
            "random effects vs quadrature",
            random_effects_match_quadrature,
        ),
        ("inclusion prior", inclusion_prior_example),
        (
            "inclusion probability posterior",
            inclusion_posterior_without_active_slots,
        ),
        (
            "inclusion indicator vs enumeration",
            inclusion_matches_enumeration,
        ),
        ("residual variance shape", residual_variance_shape_example),
        (
            "residual variance zero residuals",
            residual_variance_zero_residuals,
        ),
        (
            "residual variance vs quadrature",
            residual_variance_matches_quadrature,
        ),
        (
            "fixed-effect variance parameters",
            fixed_effect_variance_counts_active_slots,
        ),
        (
            "beta vanishes without inclusions",
            beta_vanishes_without_inclusions,
        ),
        ("prior reproduction (factors)", geweke_factors),
        ("prior reproduction (no factors)", geweke_no_factors),
    ]
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

// ---------------------------------------------------------------------------
// Numerical helpers, independent of the library.

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Mean of the density proportional to `exp(log_kernel)` on `[a, b]`.
fn quadrature_mean(log_kernel: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let n = 100_000;
    let h = (b - a) / n as f64;
    let peak = (0..=n)
        .map(|i| log_kernel(a + i as f64 * h))
        .fold(f64::NEG_INFINITY, f64::max);
    let z = simpson(|x| (log_kernel(x) - peak).exp(), a, b, n);
    simpson(|x| x * (log_kernel(x) - peak).exp(), a, b, n) / z
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = j as f64;
        sum += 2.0 * (-1.0f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
    }
    sum.clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov p-value; `m_eff` replaces the size of the second
/// sample in the scaling when that sample is autocorrelated.
pub fn ks_two_sample(a: &[f64], b: &[f64], m_eff: f64) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m_eff / (n + m_eff)).sqrt();
    kolmogorov_q((en + 0.12 + 0.11 / en) * d)
}

/// Chi-square homogeneity p-value for a discrete variable, with the second sample's
/// counts shrunk to its effective size.
fn chi_square_two_sample(a: &[f64], b: &[f64], m_eff: f64) -> f64 {
    let mut support: Vec<f64> = a.iter().chain(b).copied().collect();
    support.sort_by(|p, q| p.total_cmp(q));
    support.dedup();
    let shrink = m_eff / b.len() as f64;
    let (na, nb) = (a.len() as f64, m_eff);
    let mut stat = 0.0;
    for v in &support {
        let ca = a.iter().filter(|x| *x == v).count() as f64;
        let cb = b.iter().filter(|x| *x == v).count() as f64 * shrink;
        let total = ca + cb;
        let ea = total * na / (na + nb);
        let eb = total * nb / (na + nb);
        stat += (ca - ea).powi(2) / ea + (cb - eb).powi(2) / eb;
    }
    let df = (support.len() - 1).max(1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

/// Effective sample size from Geyer's initial positive sequence of autocorrelations.
fn effective_size(x: &[f64]) -> f64 {
    let n = x.len();
    let (mean, var) = mean_var(x);
    if var == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| {
        (0..n - lag)
            .map(|t| (x[t] - mean) * (x[t + lag] - mean))
            .sum::<f64>()
            / ((n - 1) as f64 * var)
    };
    let mut sum = 0.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = if lag == 0 { 1.0 } else { rho(lag) } + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    (n as f64 / (2.0 * sum - 1.0)).min(n as f64)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (
        m,
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone()
        .lu()
        .try_inverse()
        .expect("oracle matrix is invertible")
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

// ---------------------------------------------------------------------------
// Fixtures.

fn config(l: usize, variant: Variant) -> ModelConfig {
    ModelConfig {
        n_factors: Some(l),
        variant,
        ..ModelConfig::default()
    }
}

/// Random counts and covariates with the given random-effect levels; the state is a
/// prior draw with every scale perturbed away from its defaults.
fn fixture(
    n: usize,
    k: usize,
    p: usize,
    levels: Vec<(Vec<usize>, usize)>,
    config: &ModelConfig,
    seed: u64,
) -> (Model, MarkovState, RngStream) {
    let mut rng = RngStream::new(seed, 0, 0);
    let y = DMatrix::from_fn(n, k, |_, _| rng.random_range(0..40) as f64);
    let x = DMatrix::from_fn(n, p, |i, j| {
        if j == 0 {
            (i % 2) as f64
        } else {
            standard_normal(&mut rng)
        }
    });
    let model = Model::from_parts(y, x, levels, config).expect("valid fixture");
    let mut state = MarkovState::draw_prior(&model, &mut rng).expect("prior draw");
    for v in state.theta.iter_mut() {
        *v = 2.0 * rng.random::<f64>() - 1.0;
    }
    (model, state, rng)
}

fn design_levels(n: usize, q: usize) -> Vec<(Vec<usize>, usize)> {
    vec![((0..n).map(|i| i * q / n).collect(), q)]
}

// ---------------------------------------------------------------------------
// Log-ratio gradient and HMC.

fn naive_energy(
    theta: &[f64],
    y: &[f64],
    mu: &[f64],
    lambda: &DMatrix<f64>,
    f: &[f64],
    s2: &[f64],
) -> f64 {
    let m: f64 = y.iter().sum();
    let log_norm = theta.iter().map(|t| t.exp()).sum::<f64>().ln();
    let mut e = m * log_norm;
    for k in 0..theta.len() {
        let mean = mu[k] + (0..f.len()).map(|l| lambda[(k, l)] * f[l]).sum::<f64>();
        e += -y[k] * theta[k] + 0.5 * (theta[k] - mean).powi(2) / s2[k];
    }
    e
}

pub fn gradient_matches_finite_differences() -> Result<String, String> {
    let mut rng = RngStream::new(101, 0, 0);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (k, l) = (6, 3);
        let theta: Vec<f64> = (0..k).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let y: Vec<f64> = (0..k).map(|_| rng.random_range(0..50) as f64).collect();
        let mu: Vec<f64> = (0..k).map(|_| standard_normal(&mut rng)).collect();
        let lambda = DMatrix::from_fn(k, l, |_, _| rng.random::<f64>() - 0.5);
        let f: Vec<f64> = (0..l).map(|_| standard_normal(&mut rng)).collect();
        let s2: Vec<f64> = (0..k).map(|_| 0.2 + 2.0 * rng.random::<f64>()).collect();
        let m: f64 = y.iter().sum();
        let grad = grad_neg_log_posterior_theta(&theta, &y, m, &mu, &lambda, &f, &s2)
            .map_err(|e| e.to_string())?;
        for j in 0..k {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (naive_energy(&up, &y, &mu, &lambda, &f, &s2)
                - naive_energy(&down, &y, &mu, &lambda, &f, &s2))
                / (2.0 * h);
            worst = worst.max((grad[j] - fd).abs() / fd.abs().max(1.0));
        }
    }
    ensure(worst < 1e-5, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("max relative error {worst:.2e} over 100 instances"))
}

pub fn hmc_gaussian_moments() -> Result<String, String> {
    let y = [0.0; 3];
    let mean = [1.0, -2.0, 0.5];
    let var = [0.5, 2.0, 1.0];
    let prec: Vec<f64> = var.iter().map(|v| 1.0 / v).collect();
    let target = ThetaTarget::new(&y, &mean, &prec).map_err(|e| e.to_string())?;
    let mut rng = RngStream::new(102, 0, 0);
    let mut theta = mean.to_vec();
    let n = 100_000;
    let mut draws = vec![Vec::with_capacity(n); 3];
    for _ in 0..n {
        // Jittered step sizes break the periodicity of leapfrog on a quadratic target.
        let eps = 0.05 + 0.3 * rng.random::<f64>();
        hmc_step(&mut theta, &target, eps, 10, &mut rng);
        for k in 0..3 {
            draws[k].push(theta[k]);
        }
    }
    let mut worst = 0.0f64;
    for k in 0..3 {
        let (m, v) = mean_var(&draws[k]);
        let mean_err = (m - mean[k]).abs() / var[k].sqrt().max(mean[k].abs());
        let var_err = (v / var[k] - 1.0).abs();
        worst = worst.max(mean_err).max(var_err);
    }
    ensure(worst < 0.02, || format!("worst moment error {worst:.4}"))?;
    Ok(format!("worst relative moment error {worst:.4}"))
}

// ---------------------------------------------------------------------------
// mu.

pub fn mu_precision_example() -> Result<String, String> {
    let (model, mut state, _) = fixture(40, 3, 1, vec![], &config(2, Variant::Factors), 103);
    state.sigma_sq.fill(1.0);
    state.sigma_mu_sq = 1.0;
    let (_, precision) = mu_conditional(&state, &model, 0);
    ensure((precision - 41.0).abs() < 1e-12, || {
        format!("precision {precision}")
    })?;
    Ok(format!("precision {precision}"))
}

pub fn mu_without_samples_is_prior() -> Result<String, String> {
    let cfg = config(2, Variant::Factors);
    let model = Model::from_parts(DMatrix::zeros(0, 3), DMatrix::zeros(0, 1), vec![], &cfg)
        .map_err(|e| e.to_string())?;
    let mut rng = RngStream::new(104, 0, 0);
    let mut state = MarkovState::draw_prior(&model, &mut rng).map_err(|e| e.to_string())?;
    state.sigma_mu_sq = 2.5;
    let (mean, precision) = mu_conditional(&state, &model, 1);
    ensure(mean == 0.0 && (precision - 0.4).abs() < 1e-15, || {
        format!("N({mean}, 1/{precision})")
    })?;
    let draws: Vec<f64> = (0..40_000)
        .map(|_| {
            update_mu(&mut state, &model, &mut rng);
            state.mu[1]
        })
        .collect();
    let (m, v) = mean_var(&draws);
    ensure(m.abs() < 0.04 && (v / 2.5 - 1.0).abs() < 0.04, || {
        format!("draw mean {m}, var {v}")
    })?;
    Ok(format!("N(0, 2.5) draws: mean {m:.4}, var {v:.4}"))
}

pub fn mu_matches_quadrature() -> Result<String, String> {
    let (model, mut state, mut rng) = fixture(6, 3, 1, vec![], &config(2, Variant::Factors), 105);
    for i in 0..6 {
        for k in 0..3 {
            state.theta[(i, k)] = 1.5 + 0.5 * k as f64 + 0.3 * standard_normal(&mut rng);
        }
    }
    state.sigma_sq = DVector::from_vec(vec![0.5, 1.0, 2.0]);
    state.sigma_mu_sq = 3.0;
    let lf = &state.f * state.lambda.transpose();
    let draws = 100_000;
    let mut sums = [0.0; 3];
    for _ in 0..draws {
        update_mu(&mut state, &model, &mut rng);
        for k in 0..3 {
            sums[k] += state.mu[k];
        }
    }
    let mut worst = 0.0f64;
    for k in 0..3 {
        let kernel = |m: f64| {
            let ll: f64 = (0..6)
                .map(|i| {
                    -(state.theta[(i, k)] - lf[(i, k)] - m).powi(2) / (2.0 * state.sigma_sq[k])
                })
                .sum();
            ll - m * m / (2.0 * state.sigma_mu_sq)
        };
        let oracle = quadrature_mean(kernel, -15.0, 15.0);
        worst = worst.max(rel_err(sums[k] / draws as f64, oracle));
    }
    ensure(worst < 0.005, || format!("relative error {worst:.4}"))?;
    Ok(format!("max relative error {worst:.4}"))
}

// ---------------------------------------------------------------------------
// Loadings.

fn loading_prior_variances(state: &MarkovState, k: usize) -> Vec<f64> {
    (0..state.lambda.ncols())
        .map(|l| state.psi[(k, l)] * (state.xi[(k, l)] * state.tau[l]).powi(2))
        .collect()
}

pub fn lambda_prior_when_scores_vanish() -> Result<String, String> {
    let (model, mut state, mut rng) = fixture(8, 4, 1, vec![], &config(2, Variant::Factors), 106);
    state.f.fill(0.0);
    state.psi.fill(1.0);
    state.xi.fill(0.25);
    state.tau = DVector::from_vec(vec![2.0, 6.0]);
    let psi_k = loading_prior_variances(&state, 1);
    let (precision, rhs) = lambda_row_system(&state, 1);
    let expected =
        DMatrix::from_diagonal(&DVector::from_iterator(2, psi_k.iter().map(|v| 1.0 / v)));
    ensure(
        max_abs_diff(&precision, &expected) < 1e-12 && rhs.amax() == 0.0,
        || format!("precision {precision}, rhs {rhs}"),
    )?;
    let mut draws = vec![Vec::new(); 2];
    for _ in 0..20_000 {
        update_lambda(&mut state, &model, &mut rng).map_err(|e| e.to_string())?;
        for l in 0..2 {
            draws[l].push(state.lambda[(1, l)]);
        }
    }
    for l in 0..2 {
        let (m, v) = mean_var(&draws[l]);
        ensure(
            m.abs() < 0.05 * psi_k[l].sqrt() && (v / psi_k[l] - 1.0).abs() < 0.05,
            || format!("column {l}: mean {m}, var {v} vs {}", psi_k[l]),
        )?;
    }
    Ok(format!("draws match N(0, {:?})", psi_k))
}

pub fn lambda_scalar_case() -> Result<String, String> {
    let (_, mut state, _) = fixture(5, 3, 1, vec![], &config(1, Variant::Factors), 107);
    state.f = DMatrix::from_column_slice(5, 1, &[1.0, -0.5, 2.0, 0.0, 1.5]);
    state
        .theta
        .set_column(2, &DVector::from_vec(vec![0.8, 0.1, 1.9, -0.4, 1.0]));
    state.mu[2] = 0.2;
    state.sigma_sq[2] = 0.5;
    state.psi[(2, 0)] = 2.0;
    state.xi[(2, 0)] = 0.5;
    state.tau[0] = 1.0;
    // sum f^2 = 7.5; sum f (theta - mu) = 0.6 + 0.05 + 3.4 + 0 + 1.2 = 5.25; prior variance 0.5.
    let expected_precision = 7.5 / 0.5 + 1.0 / 0.5;
    let expected_mean = (5.25 / 0.5) / expected_precision;
    let (precision, rhs) = lambda_row_system(&state, 2);
    let mean = rhs[0] / precision[(0, 0)];
    ensure(
        (precision[(0, 0)] - expected_precision).abs() < 1e-12
            && (mean - expected_mean).abs() < 1e-12,
        || format!("precision {} mean {mean}", precision[(0, 0)]),
    )?;
    Ok(format!("mean {mean:.6}, precision {}", precision[(0, 0)]))
}

pub fn lambda_matches_dense_solve() -> Result<String, String> {
    let (model, mut state, mut rng) = fixture(8, 4, 1, vec![], &config(3, Variant::Factors), 108);
    for v in state.f.iter_mut() {
        *v = standard_normal(&mut rng);
    }
    for v in state.psi.iter_mut() {
        *v = 0.5 + rng.random::<f64>();
    }
    state.tau = DVector::from_vec(vec![1.5, 2.0, 3.0]);
    let k = 2;
    let s2 = state.sigma_sq[k];
    let mut dense = DMatrix::zeros(3, 3);
    let mut b = DVector::zeros(3);
    for i in 0..8 {
        for a in 0..3 {
            b[a] += state.f[(i, a)] * (state.theta[(i, k)] - state.mu[k]) / s2;
            for c in 0..3 {
                dense[(a, c)] += state.f[(i, a)] * state.f[(i, c)] / s2;
            }
        }
    }
    let psi_k = loading_prior_variances(&state, k);
    for a in 0..3 {
        dense[(a, a)] += 1.0 / psi_k[a];
    }
    let oracle_cov = inverse(&dense);
    let oracle_mean = &oracle_cov * b;
    let (precision, rhs) = lambda_row_system(&state, k);
    let chol = precision
        .cholesky()
        .ok_or("precision is not positive definite")?;
    let cov = chol.inverse();
    let mean = chol.solve(&rhs);
    let cov_err = max_abs_diff(&cov, &oracle_cov);
    let mean_err = (mean.clone() - oracle_mean.clone()).amax();
    ensure(cov_err < 1e-10 && mean_err < 1e-10, || {
        format!("cov error {cov_err:.2e}, mean error {mean_err:.2e}")
    })?;
    // The sampler draws from that Normal.
    let n = 20_000;
    let mut sum = DVector::zeros(3);
    let mut sq = DMatrix::zeros(3, 3);
    for _ in 0..n {
        update_lambda(&mut state, &model, &mut rng).map_err(|e| e.to_string())?;
        let row = state.lambda.row(k).transpose();
        sum += &row;
        sq += &row * row.transpose();
    }
    let emp_mean = sum / n as f64;
    let emp_cov = sq / n as f64 - &emp_mean * emp_mean.transpose();
    for a in 0..3 {
        let se = (oracle_cov[(a, a)] / n as f64).sqrt();
        ensure((emp_mean[a] - oracle_mean[a]).abs() < 5.0 * se, || {
            format!("draw mean {emp_mean} vs {oracle_mean}")
        })?;
        ensure(
            (emp_cov[(a, a)] / oracle_cov[(a, a)] - 1.0).abs() < 0.05,
            || format!("draw cov {emp_cov}"),
        )?;
    }
    Ok(format!(
        "cov error {cov_err:.1e}, mean error {mean_err:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Dirichlet-Laplace scales.

pub fn dl_local_scale_mean() -> Result<String, String> {
    let v = local_scale_mean(0.2, 3.0, -0.5);
    ensure((v - 1.2).abs() < 1e-15, || format!("{v}"))?;
    let tiny = local_scale_mean(1e-300, 1e50, 0.0);
    ensure(tiny.is_finite() && tiny > 0.0, || {
        format!("floored value {tiny}")
    })?;
    Ok(format!("xi tau / |lambda| = {v}"))
}

pub fn dl_exchangeable_weights() -> Result<String, String> {
    let mut cfg = config(1, Variant::Factors);
    cfg.c0 = 10.0;
    cfg.d0 = 10.0;
    let (model, mut state, mut rng) = fixture(6, 4, 1, vec![], &cfg, 109);
    state.lambda.fill(0.7);
    let n = 100_000;
    let mut sums = [0.0; 4];
    for _ in 0..n {
        update_dl_scales(&mut state, &model, &mut rng).map_err(|e| e.to_string())?;
        let total: f64 = state.xi.column(0).sum();
        ensure((total - 1.0).abs() < 1e-10 && state.xi.min() >= 0.0, || {
            format!("xi off the simplex: {total}")
        })?;
        for k in 0..4 {
            sums[k] += state.xi[(k, 0)];
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let worst = means.iter().map(|m| rel_err(*m, 0.25)).fold(0.0, f64::max);
    ensure(worst < 0.01, || format!("means {means:?}"))?;
    Ok(format!("weight means {:.4?}", means))
}

/// `E[tau | lambda]` by importance sampling from the joint prior of `(a, nu, tau, xi)`,
/// with `psi` integrated out so that `lambda_k | xi, tau` is Laplace with scale `xi_k tau`.
fn importance_tau(lambda: &[f64], grid: &[f64], c0: f64, d0: f64, draws: usize, seed: u64) -> f64 {
    let k = lambda.len();
    let mut rng = RngStream::new(seed, 0, 0);
    let mut log_w = Vec::with_capacity(draws);
    let mut taus = Vec::with_capacity(draws);
    for _ in 0..draws {
        let a = grid[rng.random_range(0..grid.len())];
        let nu = Gamma::new(c0, 1.0 / d0).unwrap().sample(&mut rng);
        let tau = Gamma::new(k as f64 * a, 1.0 / nu).unwrap().sample(&mut rng);
        let g: Vec<f64> = (0..k)
            .map(|_| Gamma::new(a, 1.0).unwrap().sample(&mut rng))
            .collect();
        let total: f64 = g.iter().sum();
        let mut lw = 0.0;
        for j in 0..k {
            let scale = g[j] / total * tau;
            lw += -(2.0 * scale).ln() - lambda[j].abs() / scale;
        }
        log_w.push(if lw.is_nan() { f64::NEG_INFINITY } else { lw });
        taus.push(tau);
    }
    let peak = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (lw, t) in log_w.iter().zip(&taus) {
        let w = (lw - peak).exp();
        num += w * t;
        den += w;
    }
    num / den
}

pub fn dl_matches_importance_sampler() -> Result<String, String> {
    let mut cfg = config(1, Variant::Factors);
    cfg.c0 = 10.0;
    cfg.d0 = 10.0;
    let (model, mut state, mut rng) = fixture(6, 4, 1, vec![], &cfg, 110);
    let lambda = [0.5, -0.3, 0.8, 0.1];
    for (j, v) in lambda.iter().enumerate() {
        state.lambda[(j, 0)] = *v;
    }
    let n = 200_000;
    let mut sum = 0.0;
    for it in 0..n + 1000 {
        update_dl_scales(&mut state, &model, &mut rng).map_err(|e| e.to_string())?;
        if it >= 1000 {
            sum += state.tau[0];
        }
    }
    let chain = sum / n as f64;
    let oracle = importance_tau(&lambda, model.a_grid(), cfg.c0, cfg.d0, 2_000_000, 111);
    let err = rel_err(chain, oracle);
    ensure(err < 0.02, || {
        format!("chain {chain:.4} vs importance {oracle:.4}")
    })?;
    Ok(format!(
        "E[tau]: chain {chain:.4}, importance sampler {oracle:.4}"
    ))
}

// ---------------------------------------------------------------------------
// Factor scores.

pub fn factor_scores_prior_when_loadings_vanish() -> Result<String, String> {
    let (model, mut state, _) = fixture(
        6,
        4,
        2,
        design_levels(6, 2),
        &config(3, Variant::Factors),
        112,
    );
    state.lambda.fill(0.0);
    state.omega.fill(true);
    let (precision, rhs) = factor_score_system(&state, &model);
    let prior_mean = state.factor_prior_mean(&model).transpose();
    ensure(
        max_abs_diff(&precision, &DMatrix::identity(3, 3)) == 0.0,
        || format!("precision {precision}"),
    )?;
    ensure(max_abs_diff(&rhs, &prior_mean) < 1e-14, || {
        "mean differs from prior mean".into()
    })?;
    Ok("N(b x_i + g_z, I)".into())
}

pub fn factor_score_precision_example() -> Result<String, String> {
    let (model, mut state, _) = fixture(6, 4, 1, vec![], &config(4, Variant::Factors), 113);
    state.lambda = DMatrix::identity(4, 4);
    state.sigma_sq.fill(1.0);
    let (precision, _) = factor_score_system(&state, &model);
    ensure(
        max_abs_diff(&precision, &(DMatrix::identity(4, 4) * 2.0)) == 0.0,
        || format!("{precision}"),
    )?;
    Ok("precision 2I".into())
}

pub fn factor_scores_match_dense_solve() -> Result<String, String> {
    let (model, mut state, mut rng) = fixture(
        6,
        6,
        2,
        design_levels(6, 3),
        &config(2, Variant::Factors),
        114,
    );
    for v in state.lambda.iter_mut() {
        *v = standard_normal(&mut rng);
    }
    state.omega.fill(true);
    let (k, l, n) = (6, 2, 6);
    let mut dense = DMatrix::identity(l, l);
    for j in 0..k {
        for a in 0..l {
            for c in 0..l {
                dense[(a, c)] += state.lambda[(j, a)] * state.lambda[(j, c)] / state.sigma_sq[j];
            }
        }
    }
    let oracle_cov = inverse(&dense);
    let x = model.covariates();
    let level = &model.levels()[0];
    let mut oracle_mean = DMatrix::zeros(l, n);
    for i in 0..n {
        let mut b = DVector::zeros(l);
        for a in 0..l {
            for j in 0..k {
                b[a] +=
                    state.lambda[(j, a)] * (state.theta[(i, j)] - state.mu[j]) / state.sigma_sq[j];
            }
            for c in 0..x.ncols() {
                b[a] += state.b[(a, c)] * x[(i, c)];
            }
            b[a] += state.g[0][(level.assignment[i], a)];
        }
        oracle_mean.set_column(i, &(&oracle_cov * b));
    }
    let (precision, rhs) = factor_score_system(&state, &model);
    let chol = precision
        .cholesky()
        .ok_or("precision is not positive definite")?;
    let cov_err = max_abs_diff(&chol.inverse(), &oracle_cov);
    let mean_err = max_abs_diff(&chol.solve(&rhs), &oracle_mean);
    ensure(cov_err < 1e-10 && mean_err < 1e-10, || {
        format!("cov error {cov_err:.2e}, mean error {mean_err:.2e}")
    })?;
    let draws = 20_000;
    let mut sum = DVector::<f64>::zeros(l);
    for _ in 0..draws {
        update_factor_scores(&mut state, &model, &mut rng).map_err(|e| e.to_string())?;
        sum += state.f.row(3).transpose();
    }
    let emp = sum / draws as f64;
    for a in 0..l {
        let se = (oracle_cov[(a, a)] / draws as f64).sqrt();
        ensure((emp[a] - oracle_mean[(a, 3)]).abs() < 5.0 * se, || {
            format!("draw mean {emp}")
        })?;
    }
    Ok(format!(
        "cov error {cov_err:.1e}, mean error {mean_err:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Random effects.

pub fn random_effect_empty_block() -> Result<String, String> {
    let levels = vec![(vec![0, 0, 0, 1, 1, 1], 3)];
    let (model, mut state, mut rng) = fixture(6, 4, 1, levels, &config(2, Variant::Factors), 115);
    state.sigma_g_sq[0] = 1.7;
    let (mean, precision) = random_effect_conditional(&state, &model, 0, 2, 1);
    ensure(mean == 0.0 && (precision - 1.0 / 1.7).abs() < 1e-15, || {
        format!("N({mean}, 1/{precision})")
    })?;
    let draws: Vec<f64> = (0..40_000)
        .map(|_| {
            update_random_effects(&mut state, &model, &mut rng);
            state.g[0][(2, 1)]
        })
        .collect();
    let (m, v) = mean_var(&draws);
    ensure(m.abs() < 0.03 && (v / 1.7 - 1.0).abs() < 0.04, || {
        format!("mean {m}, var {v}")
    })?;
    Ok(format!("prior draws: mean {m:.4}, var {v:.4}"))
}

pub fn random_effect_precision_example() -> Result<String, String> {
    let levels = vec![((0..16).map(|i| i / 8).collect(), 2)];
    let (model, mut state, _) = fixture(16, 4, 1, levels, &config(2, Variant::Factors), 116);
    state.sigma_g_sq[0] = 1.0;
    let (_, precision) = random_effect_conditional(&state, &model, 0, 1, 0);
    ensure((precision - 9.0).abs() < 1e-15, || format!("{precision}"))?;
    Ok(format!("precision {precision}"))
}

fn random_effect_quadrature(variant: Variant, seed: u64) -> Result<f64, String> {
    let l = 2;
    let (model, mut state, mut rng) =
        fixture(8, l, 2, design_levels(8, 2), &config(l, variant), seed);
    state.omega.fill(true);
    state.sigma_g_sq[0] = 2.0;
    let x = model.covariates().clone();
    // Residual targets pushed away from zero so that a relative tolerance is meaningful.
    for i in 0..8 {
        for c in 0..l {
            let fixed: f64 = (0..2).map(|j| x[(i, j)] * state.b[(c, j)]).sum();
            match variant {
                Variant::Factors => state.f[(i, c)] = fixed + 1.5 + 0.3 * standard_normal(&mut rng),
                Variant::NoFactors => {
                    state.theta[(i, c)] =
                        state.mu[c] + fixed + 1.5 + 0.3 * standard_normal(&mut rng)
                }
            }
        }
    }
    let draws = 100_000;
    let mut sums = DMatrix::<f64>::zeros(2, l);
    for _ in 0..draws {
        update_random_effects(&mut state, &model, &mut rng);
        sums += &state.g[0];
    }
    let assignment = model.levels()[0].assignment.clone();
    let mut worst = 0.0f64;
    for block in 0..2 {
        for c in 0..l {
            let kernel = |g: f64| {
                let mut ll = -g * g / (2.0 * state.sigma_g_sq[0]);
                for i in (0..8).filter(|&i| assignment[i] == block) {
                    let fixed: f64 = (0..2).map(|j| x[(i, j)] * state.b[(c, j)]).sum();
                    let (response, weight) = match variant {
                        Variant::Factors => (state.f[(i, c)], 1.0),
                        Variant::NoFactors => {
                            (state.theta[(i, c)] - state.mu[c], 1.0 / state.sigma_sq[c])
                        }
                    };
                    ll -= weight * (response - fixed - g).powi(2) / 2.0;
                }
                ll
            };
            let oracle = quadrature_mean(kernel, -20.0, 20.0);
            worst = worst.max(rel_err(sums[(block, c)] / draws as f64, oracle));
        }
    }
    Ok(worst)
}

pub fn random_effects_match_quadrature() -> Result<String, String> {
    let with = random_effect_quadrature(Variant::Factors, 117)?;
    let without = random_effect_quadrature(Variant::NoFactors, 118)?;
    ensure(with < 0.005 && without < 0.005, || {
        format!("relative errors {with:.4} / {without:.4}")
    })?;
    Ok(format!(
        "max relative error {with:.4} (factors), {without:.4} (no factors)"
    ))
}

// ---------------------------------------------------------------------------
// Fixed effects and inclusion.

pub fn inclusion_prior_example() -> Result<String, String> {
    let cfg = ModelConfig {
        inclusion_prob: 0.5,
        ..ModelConfig::default()
    };
    let (a0, b0) = cfg.inclusion_prior(40);
    ensure(a0 == 1.0 && b0 == 40.0, || format!("({a0}, {b0})"))?;
    Ok(format!("a0 = {a0}, b0 = {b0}"))
}

pub fn inclusion_posterior_without_active_slots() -> Result<String, String> {
    let (model, mut state, _) = fixture(6, 4, 2, vec![], &config(3, Variant::Factors), 119);
    state.omega.fill(false);
    let b0 = model.priors().b0;
    let (a, b) = inclusion_posterior(&state, &model, 1);
    ensure(a == 1.0 && b == b0 + 3.0, || format!("Beta({a}, {b})"))?;
    Ok(format!("Beta({a}, {b})"))
}

/// `Pr(omega_jl = 1 | ...)` from the two full Gaussian log-likelihoods of slot `l`.
fn enumerated_inclusion(state: &MarkovState, model: &Model, l: usize, j: usize) -> f64 {
    let x = model.covariates();
    let n = model.n_samples();
    let assignment: Vec<Vec<usize>> = model
        .levels()
        .iter()
        .map(|lv| lv.assignment.clone())
        .collect();
    let log_lik = |on: bool| {
        let mut ll = 0.0;
        for i in 0..n {
            let mut mean: f64 = assignment
                .iter()
                .enumerate()
                .map(|(r, z)| state.g[r][(z[i], l)])
                .sum();
            for c in 0..x.ncols() {
                let active = if c == j { on } else { state.omega[(l, c)] };
                if active {
                    mean += x[(i, c)] * state.b[(l, c)];
                }
            }
            let (response, weight) = match model.variant() {
                Variant::Factors => (state.f[(i, l)], 1.0),
                Variant::NoFactors => (state.theta[(i, l)] - state.mu[l], 1.0 / state.sigma_sq[l]),
            };
            ll -= 0.5 * weight * (response - mean).powi(2);
        }
        ll
    };
    let pi = state.pi[j];
    let log1 = pi.ln() + log_lik(true);
    let log0 = (1.0 - pi).ln() + log_lik(false);
    let m = log1.max(log0);
    (log1 - m).exp() / ((log1 - m).exp() + (log0 - m).exp())
}

pub fn inclusion_matches_enumeration() -> Result<String, String> {
    let mut worst = 0.0f64;
    let cases = [
        (1, 2, Variant::Factors, 120),
        (3, 2, Variant::Factors, 121),
        (3, 3, Variant::NoFactors, 122),
    ];
    for (p, l, variant, seed) in cases {
        let (model, mut state, mut rng) =
            fixture(10, 3, p, design_levels(10, 2), &config(l, variant), seed);
        for v in state.f.iter_mut() {
            *v = 0.4 * standard_normal(&mut rng);
        }
        for v in state.b.iter_mut() {
            *v = 0.3 * standard_normal(&mut rng);
        }
        for v in state.omega.iter_mut() {
            *v = rng.random::<bool>();
        }
        for slot in 0..model.n_factors() {
            for j in 0..p {
                let got = inclusion_probability(&state, &model, slot, j);
                let oracle = enumerated_inclusion(&state, &model, slot, j);
                worst = worst.max((got - oracle).abs());
            }
        }
    }
    ensure(worst < 1e-12, || format!("max abs error {worst:.2e}"))?;
    Ok(format!("max abs error {worst:.1e}"))
}

pub fn beta_vanishes_without_inclusions() -> Result<String, String> {
    let (_, mut state, _) = fixture(6, 4, 3, vec![], &config(2, Variant::Factors), 123);
    state.omega.fill(false);
    let beta = state.beta();
    ensure(beta.iter().all(|v| *v == 0.0), || format!("{beta}"))?;
    Ok("beta = 0".into())
}

// ---------------------------------------------------------------------------
// Variances.

pub fn residual_variance_shape_example() -> Result<String, String> {
    let cfg = ModelConfig {
        u0: 1.0,
        ..config(2, Variant::Factors)
    };
    let (model, state, _) = fixture(40, 3, 1, vec![], &cfg, 124);
    let (shape, _) = residual_variance_posterior(&state, &model, 0);
    ensure(shape == 21.0, || format!("shape {shape}"))?;
    Ok(format!("shape {shape}"))
}

pub fn residual_variance_zero_residuals() -> Result<String, String> {
    let cfg = ModelConfig {
        v0: 0.7,
        ..config(2, Variant::Factors)
    };
    let (model, mut state, _) = fixture(6, 3, 1, vec![], &cfg, 125);
    let lf = &state.f * state.lambda.transpose();
    for i in 0..6 {
        for k in 0..3 {
            state.theta[(i, k)] = state.mu[k] + lf[(i, k)];
        }
    }
    let (_, scale) = residual_variance_posterior(&state, &model, 2);
    ensure((scale - 0.7).abs() < 1e-14, || format!("scale {scale}"))?;
    Ok(format!("scale {scale}"))
}

pub fn residual_variance_matches_quadrature() -> Result<String, String> {
    let cfg = ModelConfig {
        u0: 2.0,
        v0: 1.5,
        ..config(2, Variant::Factors)
    };
    let (model, mut state, mut rng) = fixture(6, 3, 1, vec![], &cfg, 126);
    let lf = &state.f * state.lambda.transpose();
    let ss: Vec<f64> = (0..3)
        .map(|k| {
            (0..6)
                .map(|i| (state.theta[(i, k)] - state.mu[k] - lf[(i, k)]).powi(2))
                .sum()
        })
        .collect();
    let draws = 100_000;
    let mut sums = [0.0; 3];
    for _ in 0..draws {
        update_variances(&mut state, &model, &mut rng).map_err(|e| e.to_string())?;
        for k in 0..3 {
            sums[k] += state.sigma_sq[k];
        }
    }
    let mut worst = 0.0f64;
    for k in 0..3 {
        // Density of sigma^2 proportional to prior times the Gaussian likelihood of the residuals.
        let kernel =
            |s: f64| -(cfg.u0 + 1.0) * s.ln() - cfg.v0 / s - 3.0 * s.ln() - ss[k] / (2.0 * s);
        let oracle = quadrature_mean(kernel, 1e-4, 200.0);
        worst = worst.max(rel_err(sums[k] / draws as f64, oracle));
    }
    ensure(worst < 0.005, || format!("relative error {worst:.4}"))?;
    Ok(format!("max relative error {worst:.4}"))
}

pub fn fixed_effect_variance_counts_active_slots() -> Result<String, String> {
    let cfg = ModelConfig {
        u0: 2.0,
        v0: 0.5,
        ..config(2, Variant::Factors)
    };
    let (model, mut state, _) = fixture(6, 3, 3, vec![], &cfg, 129);
    state.b = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.25, -1.0]);
    state.omega = DMatrix::from_row_slice(2, 3, &[true, false, true, false, false, true]);
    // Active: 1.0, 0.5, -1.0.
    let (shape, scale) = fixed_effect_variance_posterior(&state, &model);
    ensure(shape == 3.5 && scale == 0.5 + 0.5 * 2.25, || {
        format!("({shape}, {scale})")
    })?;
    Ok(format!("shape {shape}, scale {scale}"))
}

// ---------------------------------------------------------------------------
// Prior reproduction of the full kernel.

struct Marginal {
    name: &'static str,
    discrete: bool,
    get: fn(&MarkovState) -> f64,
}

fn geweke(
    variant: Variant,
    retained: usize,
    thin: usize,
    marginals: &[Marginal],
) -> Result<String, String> {
    let (n, k, l) = (6, 5, if variant == Variant::Factors { 2 } else { 5 });
    let cfg = ModelConfig {
        u0: 3.0,
        v0: 2.0,
        c0: 10.0,
        d0: 10.0,
        ..config(l, variant)
    };
    let x = DMatrix::from_fn(n, 1, |i, _| (i % 2) as f64);
    let levels = vec![(vec![0, 0, 0, 1, 1, 1], 2)];
    let mut model = Model::from_parts(DMatrix::from_element(n, k, 6.0), x, levels, &cfg)
        .map_err(|e| e.to_string())?;
    let totals = vec![30.0; n];
    let mut rng = RngStream::new(127, 0, 0);
    let mut prior = vec![Vec::with_capacity(retained); marginals.len()];
    for _ in 0..retained {
        let s = MarkovState::draw_prior(&model, &mut rng).map_err(|e| e.to_string())?;
        for (m, v) in marginals.iter().zip(prior.iter_mut()) {
            v.push((m.get)(&s));
        }
    }
    let mut state = MarkovState::draw_prior(&model, &mut rng).map_err(|e| e.to_string())?;
    model
        .set_counts(simulate_counts(&state.theta, &totals, &mut rng).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut streams = SweepStreams::new(128, 0, n);
    let eps = vec![0.1; n];
    let mut chain = vec![Vec::with_capacity(retained); marginals.len()];
    for it in 0..retained * thin {
        sweep(&mut state, &model, &eps, 10, &mut streams).map_err(|e| e.to_string())?;
        for c in 0..state.xi.ncols() {
            let total: f64 = state.xi.column(c).sum();
            ensure(
                (total - 1.0).abs() < 1e-10 && state.xi.column(c).min() >= 0.0,
                || format!("xi column {c} sums to {total}"),
            )?;
        }
        model
            .set_counts(
                simulate_counts(&state.theta, &totals, &mut rng).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
        if (it + 1) % thin == 0 {
            for (m, v) in marginals.iter().zip(chain.iter_mut()) {
                v.push((m.get)(&state));
            }
        }
    }
    let mut report = Vec::new();
    let mut failures = Vec::new();
    for (i, m) in marginals.iter().enumerate() {
        let m_eff = effective_size(&chain[i]);
        let p = if m.discrete {
            chi_square_two_sample(&prior[i], &chain[i], m_eff)
        } else {
            ks_two_sample(&prior[i], &chain[i], m_eff)
        };
        report.push(format!("{} p={p:.3} (ess {m_eff:.0})", m.name));
        if p <= 0.001 {
            failures.push(m.name);
        }
    }
    ensure(failures.is_empty(), || {
        format!("rejected {failures:?}: {}", report.join(", "))
    })?;
    Ok(report.join(", "))
}

pub fn geweke_factors() -> Result<String, String> {
    let marginals = [
        Marginal {
            name: "mu_1",
            discrete: false,
            get: |s| s.mu[0],
        },
        Marginal {
            name: "mu_5",
            discrete: false,
            get: |s| s.mu[4],
        },
        Marginal {
            name: "sigma2_1",
            discrete: false,
            get: |s| s.sigma_sq[0],
        },
        Marginal {
            name: "pi",
            discrete: false,
            get: |s| s.pi[0],
        },
        Marginal {
            name: "tau_1",
            discrete: false,
            get: |s| s.tau[0],
        },
        Marginal {
            name: "tau_2",
            discrete: false,
            get: |s| s.tau[1],
        },
        Marginal {
            name: "nu",
            discrete: false,
            get: |s| s.nu,
        },
        Marginal {
            name: "a_1",
            discrete: true,
            get: |s| s.a[0],
        },
        Marginal {
            name: "lambda_11",
            discrete: false,
            get: |s| s.lambda[(0, 0)],
        },
        Marginal {
            name: "sigma2_g",
            discrete: false,
            get: |s| s.sigma_g_sq[0],
        },
        Marginal {
            name: "sigma2_b",
            discrete: false,
            get: |s| s.sigma_b_sq,
        },
    ];
    geweke(Variant::Factors, 20_000, 100, &marginals)
}

pub fn geweke_no_factors() -> Result<String, String> {
    let marginals = [
        Marginal {
            name: "mu_1",
            discrete: false,
            get: |s| s.mu[0],
        },
        Marginal {
            name: "sigma2_1",
            discrete: false,
            get: |s| s.sigma_sq[0],
        },
        Marginal {
            name: "pi",
            discrete: false,
            get: |s| s.pi[0],
        },
        Marginal {
            name: "g_11",
            discrete: false,
            get: |s| s.g[0][(0, 0)],
        },
        Marginal {
            name: "sigma2_g",
            discrete: false,
            get: |s| s.sigma_g_sq[0],
        },
        Marginal {
            name: "sigma2_b",
            discrete: false,
            get: |s| s.sigma_b_sq,
        },
    ];
    geweke(Variant::NoFactors, 20_000, 50, &marginals)
}
