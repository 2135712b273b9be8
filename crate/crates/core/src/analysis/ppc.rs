//! Posterior predictive checks on sparsity and dominance of single taxa.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::central_interval;
use crate::config::Variant;
use crate::data::softmax_into;
use crate::engine::PosteriorArchive;
use crate::error::{Error, Result};
use crate::rand_dist::{derive_seed, multinomial, standard_normal, RngStream};

/// Per-sample statistics compared against their predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    /// Share of taxa with a zero count.
    ZeroFraction,
    /// Share of taxa with at most two counts.
    AtMostTwoFraction,
    /// Largest single-taxon share of the sample total.
    MaxProportion,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [
        Statistic::ZeroFraction,
        Statistic::AtMostTwoFraction,
        Statistic::MaxProportion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::ZeroFraction => "zero_fraction",
            Statistic::AtMostTwoFraction => "at_most_two_fraction",
            Statistic::MaxProportion => "max_proportion",
        }
    }
}

/// The three statistics of one count vector, in [`Statistic::ALL`] order.
pub fn sample_statistics(counts: &[f64]) -> [f64; 3] {
    let k = counts.len() as f64;
    let total: f64 = counts.iter().sum();
    let zeros = counts.iter().filter(|c| **c == 0.0).count() as f64;
    let small = counts.iter().filter(|c| **c <= 2.0).count() as f64;
    let max = counts.iter().copied().fold(0.0, f64::max);
    [
        zeros / k,
        small / k,
        if total > 0.0 { max / total } else { 0.0 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpcInterval {
    pub sample: usize,
    pub statistic: Statistic,
    pub observed: f64,
    pub lower: f64,
    pub upper: f64,
    /// Observed value lies outside the closed interval.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpcReport {
    pub intervals: Vec<PpcInterval>,
    pub n_draws: usize,
}

impl PpcReport {
    /// Fraction of samples flagged for one statistic.
    pub fn flagged_fraction(&self, statistic: Statistic) -> f64 {
        let rows: Vec<&PpcInterval> = self
            .intervals
            .iter()
            .filter(|r| r.statistic == statistic)
            .collect();
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().filter(|r| r.flagged).count() as f64 / rows.len() as f64
    }
}

/// For every stored predictive draw, redraws `theta_i` from its conditional normal with fresh
/// factor noise and residuals, simulates `Y_i ~ Multinomial(m_i, softmax(theta_i))` and
/// reports the central 95% interval of each statistic.
pub fn posterior_predictive_checks(
    archive: &PosteriorArchive,
    counts: &DMatrix<f64>,
    seed: u64,
) -> Result<PpcReport> {
    let (n, k, l) = (archive.n_samples, archive.n_taxa, archive.n_factors);
    if counts.shape() != (n, k) {
        return Err(Error::Dimension(format!(
            "counts are {}x{} but the archive was fit to {n}x{k}",
            counts.nrows(),
            counts.ncols()
        )));
    }
    let pred = &archive.predictive;
    let draws = pred.mu.rows();
    if draws == 0 {
        return Err(Error::Validation(
            "archive holds no predictive draws".into(),
        ));
    }
    let factors = archive.variant == Variant::Factors;
    let stream_seed = derive_seed(seed, &[0x9cc]);

    let per_sample: Vec<Vec<PpcInterval>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(stream_seed, 0, i as u64);
            let observed_row: Vec<f64> = counts.row(i).iter().copied().collect();
            let total = observed_row.iter().sum::<f64>() as u64;
            let observed = sample_statistics(&observed_row);
            let mut sims: [Vec<f64>; 3] = Default::default();
            let mut theta = vec![0.0; k];
            let mut phi = vec![0.0; k];
            let mut f = vec![0.0; l];
            for d in 0..draws {
                let mu = pred.mu.row(d);
                let s2 = pred.sigma_sq.row(d);
                let fm = &pred.factor_mean.row(d)[i * l..(i + 1) * l];
                if factors {
                    let lambda = pred.lambda.row(d);
                    for (fc, m) in f.iter_mut().zip(fm) {
                        *fc = m + standard_normal(&mut rng);
                    }
                    for j in 0..k {
                        let lf: f64 = (0..l).map(|c| lambda[j * l + c] * f[c]).sum();
                        theta[j] = mu[j] + lf + s2[j].sqrt() * standard_normal(&mut rng);
                    }
                } else {
                    for j in 0..k {
                        theta[j] = mu[j] + fm[j] + s2[j].sqrt() * standard_normal(&mut rng);
                    }
                }
                softmax_into(&theta, &mut phi);
                let y: Vec<f64> = multinomial(total, &phi, &mut rng)?
                    .into_iter()
                    .map(|c| c as f64)
                    .collect();
                for (s, v) in sims.iter_mut().zip(sample_statistics(&y)) {
                    s.push(v);
                }
            }
            Ok(Statistic::ALL
                .iter()
                .enumerate()
                .map(|(s, &statistic)| {
                    let (lower, upper) = central_interval(&sims[s], 0.95);
                    PpcInterval {
                        sample: i,
                        statistic,
                        observed: observed[s],
                        lower,
                        upper,
                        flagged: observed[s] < lower || observed[s] > upper,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(PpcReport {
        intervals: per_sample.into_iter().flatten().collect(),
        n_draws: draws,
    })
}
