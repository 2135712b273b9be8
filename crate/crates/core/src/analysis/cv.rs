//! Cross-validation by multinomial thinning of each sample's counts.

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::config::ModelConfig;
use crate::engine::run_chain;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rand_dist::{derive_seed, multinomial, RngStream};

/// Splits every cell into `folds` parts by assigning each count to a fold uniformly at random.
/// A sample whose counts all land in one fold is split again, so every training set (all but
/// one fold) keeps at least one count per sample.
pub fn thin_counts(
    y: &DMatrix<f64>,
    folds: usize,
    rng: &mut RngStream,
) -> Result<Vec<DMatrix<f64>>> {
    if folds < 2 {
        return Err(Error::Validation(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    let (n, k) = y.shape();
    let probs = vec![1.0 / folds as f64; folds];
    let mut parts = vec![DMatrix::zeros(n, k); folds];
    for i in 0..n {
        let total: f64 = y.row(i).sum();
        if total < 2.0 {
            return Err(Error::Validation(format!(
                "sample {} has fewer than two counts and cannot be split",
                i + 1
            )));
        }
        loop {
            let mut split = vec![vec![0.0; k]; folds];
            for j in 0..k {
                let c = y[(i, j)];
                if c > 0.0 {
                    for (f, v) in multinomial(c as u64, &probs, rng)?.into_iter().enumerate() {
                        split[f][j] = v as f64;
                    }
                }
            }
            let fold_totals: Vec<f64> = split.iter().map(|s| s.iter().sum()).collect();
            if fold_totals.iter().all(|t| *t < total) {
                for (f, s) in split.into_iter().enumerate() {
                    for (j, v) in s.into_iter().enumerate() {
                        parts[f][(i, j)] = v;
                    }
                }
                break;
            }
        }
    }
    Ok(parts)
}

/// `ln P(y | m, phi)` for one count vector; `phi` is renormalized first.
pub fn multinomial_log_likelihood(y: &[f64], phi: &[f64]) -> f64 {
    let norm: f64 = phi.iter().sum();
    let m: f64 = y.iter().sum();
    let mut ll = ln_gamma(m + 1.0);
    for (&c, &p) in y.iter().zip(phi) {
        ll -= ln_gamma(c + 1.0);
        if c > 0.0 {
            ll += c * (p / norm).ln();
        }
    }
    ll
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub log_lik_a: Vec<f64>,
    pub log_lik_b: Vec<f64>,
    /// `a - b` per sample.
    pub differences: Vec<f64>,
    pub positive: usize,
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSummary {
    pub folds: Vec<FoldResult>,
    /// Per-fold fraction of strictly positive differences, averaged over folds.
    pub fraction_positive: f64,
    pub ties: usize,
}

/// Fits `config_a` and `config_b` to each training split of the counts in `template` and scores
/// the held-out fold under each fit's posterior-mean composition.
pub fn cross_validate(
    template: &Model,
    config_a: &ModelConfig,
    config_b: &ModelConfig,
    folds: usize,
    seed: u64,
) -> Result<CvSummary> {
    let mut split_rng = RngStream::new(derive_seed(seed, &[0xcf]), 0, 0);
    let parts = thin_counts(template.counts(), folds, &mut split_rng)?;
    let levels: Vec<(Vec<usize>, usize)> = template
        .levels()
        .iter()
        .map(|lv| (lv.assignment.clone(), lv.n_blocks()))
        .collect();
    let n = template.n_samples();
    let mut results = Vec::with_capacity(folds);
    for (f, test) in parts.iter().enumerate() {
        let train = template.counts() - test;
        let score = |config: &ModelConfig| -> Result<Vec<f64>> {
            let config = ModelConfig {
                seed: derive_seed(config.seed, &[f as u64]),
                ..config.clone()
            };
            let model = Model::from_parts(
                train.clone(),
                template.covariates().clone(),
                levels.clone(),
                &config,
            )?;
            let archive = run_chain(&model, &config, 0)?;
            Ok((0..n)
                .map(|i| {
                    let y: Vec<f64> = test.row(i).iter().copied().collect();
                    let phi: Vec<f64> = archive.phi_mean.row(i).iter().copied().collect();
                    multinomial_log_likelihood(&y, &phi)
                })
                .collect())
        };
        let log_lik_a = score(config_a)?;
        let log_lik_b = score(config_b)?;
        let differences: Vec<f64> = log_lik_a
            .iter()
            .zip(&log_lik_b)
            .map(|(a, b)| a - b)
            .collect();
        results.push(FoldResult {
            positive: differences.iter().filter(|d| **d > 0.0).count(),
            ties: differences.iter().filter(|d| **d == 0.0).count(),
            log_lik_a,
            log_lik_b,
            differences,
        });
    }
    let fraction_positive = results
        .iter()
        .map(|r| r.positive as f64 / n as f64)
        .sum::<f64>()
        / folds as f64;
    let ties = results.iter().map(|r| r.ties).sum();
    Ok(CvSummary {
        folds: results,
        fraction_positive,
        ties,
    })
}
