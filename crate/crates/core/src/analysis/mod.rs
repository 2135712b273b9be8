//! Inference summaries computed from a posterior archive: global and local treatment
//! tests, the residual-variance decomposition, the loading correlation structure,
//! posterior predictive checks and cross-validated variant comparison.

mod clustering;
mod cv;
mod ppc;
mod report;

pub use clustering::{complete_linkage, leaf_order, Merge};
pub use cv::{cross_validate, multinomial_log_likelihood, thin_counts, CvSummary, FoldResult};
pub use ppc::{posterior_predictive_checks, sample_statistics, PpcInterval, PpcReport, Statistic};
pub use report::AnalysisReport;

use nalgebra::DMatrix;

use crate::engine::{loading_correlation, PosteriorArchive};
use crate::error::{Error, Result};

/// Rejection threshold of the global test.
pub const GLOBAL_THRESHOLD: f64 = 0.9;
/// Fewest retained draws accepted for credible intervals.
pub const MIN_DRAWS_FOR_QUANTILES: usize = 40;

/// Type-7 empirical quantile (linear interpolation between order statistics) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Central interval of unsorted data.
pub fn central_interval(values: &[f64], mass: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let tail = (1.0 - mass) / 2.0;
    (quantile_sorted(&v, tail), quantile_sorted(&v, 1.0 - tail))
}

/// Posterior probability that covariate `j` is active on at least one factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalTest {
    pub covariate: usize,
    pub probability: f64,
    pub reject: bool,
}

/// Fraction of retained draws with `S_j = sum_l omega_lj > 0`; rejects when it exceeds
/// `threshold`.
pub fn global_test(archive: &PosteriorArchive, j: usize, threshold: f64) -> Result<GlobalTest> {
    if j >= archive.n_covariates {
        return Err(Error::Validation(format!(
            "covariate {j} out of range for {} covariates",
            archive.n_covariates
        )));
    }
    let draws = archive.n_draws();
    if draws == 0 {
        return Err(Error::Validation("archive holds no draws".into()));
    }
    let active = (0..draws)
        .filter(|&r| (0..archive.n_factors).any(|l| archive.omega_at(r, l, j)))
        .count();
    let probability = active as f64 / draws as f64;
    Ok(GlobalTest {
        covariate: j,
        probability,
        reject: probability > threshold,
    })
}

/// Posterior summary of one `beta_kj`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTest {
    pub taxon: usize,
    pub covariate: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    /// The closed interval `[lower, upper]` does not contain zero.
    pub excludes_zero: bool,
}

/// 95% equal-tailed intervals of every coefficient.
pub fn local_tests(archive: &PosteriorArchive) -> Result<Vec<LocalTest>> {
    let draws = archive.n_draws();
    if draws < MIN_DRAWS_FOR_QUANTILES {
        return Err(Error::Validation(format!(
            "{draws} retained draws; credible intervals need at least {MIN_DRAWS_FOR_QUANTILES}"
        )));
    }
    let mut out = Vec::with_capacity(archive.n_taxa * archive.n_covariates);
    for k in 0..archive.n_taxa {
        for j in 0..archive.n_covariates {
            let values = archive.beta_draws(k, j);
            let mean = values.iter().sum::<f64>() / draws as f64;
            let (lower, upper) = central_interval(&values, 0.95);
            out.push(LocalTest {
                taxon: k,
                covariate: j,
                mean,
                lower,
                upper,
                excludes_zero: lower > 0.0 || upper < 0.0,
            });
        }
    }
    Ok(out)
}

/// Share of each taxon's residual variance explained by the design-level random effects:
/// `1 - s_k / (s_k + (1 + sum_r s_r) sum_l lambda_kl^2)` from posterior means.
pub fn eta(sigma_sq: &[f64], level_variances: &[f64], lambda: &DMatrix<f64>) -> Vec<f64> {
    let scale = 1.0 + level_variances.iter().sum::<f64>();
    sigma_sq
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let shared = scale * lambda.row(k).iter().map(|v| v * v).sum::<f64>();
            let total = s + shared;
            if total > 0.0 {
                (1.0 - s / total).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Posterior-mean residual variances and the decomposition `eta_k` per taxon.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceDecomposition {
    pub sigma_sq: Vec<f64>,
    pub level_variances: Vec<f64>,
    pub eta: Vec<f64>,
}

pub fn variance_decomposition(archive: &PosteriorArchive) -> VarianceDecomposition {
    let sigma_sq = archive.sigma_sq.means();
    let level_variances = archive.sigma_g_sq.means();
    let eta = eta(&sigma_sq, &level_variances, &archive.lambda_mean);
    VarianceDecomposition {
        sigma_sq,
        level_variances,
        eta,
    }
}

/// Correlation of `Lambda_hat Lambda_hat'` with its complete-linkage tree on `1 - C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorCorrelation {
    pub correlation: DMatrix<f64>,
    pub merges: Vec<Merge>,
    pub order: Vec<usize>,
}

pub fn factor_correlation(archive: &PosteriorArchive) -> FactorCorrelation {
    factor_correlation_of(&archive.lambda_mean)
}

pub fn factor_correlation_of(lambda: &DMatrix<f64>) -> FactorCorrelation {
    let correlation = loading_correlation(lambda);
    let distance = correlation.map(|c| 1.0 - c);
    let merges = complete_linkage(&distance);
    let order = leaf_order(correlation.nrows(), &merges);
    FactorCorrelation {
        correlation,
        merges,
        order,
    }
}
