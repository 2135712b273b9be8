//! Synthetic designed experiments with known treatment effects, the distance-based
//! permutation baseline, and the factorial benchmark harness.

mod permanova;
mod study;

pub use permanova::{bray_curtis, permanova, pseudo_f, PermanovaResult, MIN_PERMUTATIONS};

pub use study::{
    evaluate_local, local_metrics, run_study, LocalMetrics, Method, ReplicateFailure, ReplicateRow,
    StudyGrid, StudyResults, FIT_METRICS, GLOBAL_METRICS, GRID_KEYS,
};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{softmax_into, CountTable, ExperimentDesign, RandomFactor};
use crate::error::{Error, Result};
use crate::rand_dist::{multinomial, standard_normal};

/// Taxa per effect cluster.
pub const CLUSTER_SIZE: usize = 5;

/// Scenario keys with descriptions, as accepted by [`SimScenario::set`].
pub const SCENARIO_KEYS: &[(&str, &str)] = &[
    ("n_taxa", "taxa per data set (default 100)"),
    ("n_samples", "samples per data set (default 40)"),
    ("n_blocks", "blocks per data set (default 5)"),
    (
        "density",
        "percent of taxa with a treatment effect (default 0)",
    ),
    ("block_var", "block-effect variance (default 1)"),
    ("error_var", "sample-error variance (default 1)"),
    (
        "rho",
        "AR(1) correlation of block effects and errors (default 0.9)",
    ),
    ("rho_block", "AR(1) correlation of block effects only"),
    ("rho_error", "AR(1) correlation of sample errors only"),
    ("min_total", "smallest sample total (default 2500)"),
    ("max_total", "largest sample total (default 5000)"),
];

/// One cell of the simulation design.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub n_taxa: usize,
    pub n_samples: usize,
    pub n_blocks: usize,
    /// Percentage of taxa with a nonzero effect: 0, 5 or 10 in the reference design.
    pub density: usize,
    pub block_var: f64,
    pub error_var: f64,
    pub rho_block: f64,
    pub rho_error: f64,
    /// Inclusive range of per-sample totals.
    pub min_total: u64,
    pub max_total: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            n_taxa: 100,
            n_samples: 40,
            n_blocks: 5,
            density: 0,
            block_var: 1.0,
            error_var: 1.0,
            rho_block: 0.9,
            rho_error: 0.9,
            min_total: 2500,
            max_total: 5000,
        }
    }
}

impl SimScenario {
    /// Number of effect clusters implied by the density.
    pub fn n_clusters(&self) -> usize {
        self.density * self.n_taxa / 100 / CLUSTER_SIZE
    }

    /// Sets one scenario key; `rho` sets both AR(1) correlations.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Validation(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "n_taxa" => self.n_taxa = parse(key, value)?,
            "n_samples" => self.n_samples = parse(key, value)?,
            "n_blocks" => self.n_blocks = parse(key, value)?,
            "density" => self.density = parse(key, value)?,
            "block_var" => self.block_var = parse(key, value)?,
            "error_var" => self.error_var = parse(key, value)?,
            "rho" => {
                self.rho_block = parse(key, value)?;
                self.rho_error = self.rho_block;
            }
            "rho_block" => self.rho_block = parse(key, value)?,
            "rho_error" => self.rho_error = parse(key, value)?,
            "min_total" => self.min_total = parse(key, value)?,
            "max_total" => self.max_total = parse(key, value)?,
            other => return Err(Error::Validation(format!("unknown scenario key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_taxa < 2 || self.n_samples == 0 || self.n_blocks == 0 {
            return bad("scenario needs at least two taxa, one sample and one block".into());
        }
        if self.n_samples % self.n_blocks != 0 {
            return bad(format!(
                "{} samples cannot be split evenly into {} blocks",
                self.n_samples, self.n_blocks
            ));
        }
        if (self.n_samples / self.n_blocks) % 2 != 0 {
            return bad("blocks need an even size for a balanced treatment".into());
        }
        if self.density > 100 || (self.density * self.n_taxa) % (100 * CLUSTER_SIZE) != 0 {
            return bad(format!(
                "{}% of {} taxa is not a whole number of clusters of {CLUSTER_SIZE}",
                self.density, self.n_taxa
            ));
        }
        if self.n_taxa % CLUSTER_SIZE != 0 && self.density > 0 {
            return bad(format!(
                "{} taxa do not split into clusters of {CLUSTER_SIZE}",
                self.n_taxa
            ));
        }
        for (name, v) in [("block_var", self.block_var), ("error_var", self.error_var)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative"));
            }
        }
        for (name, r) in [("rho_block", self.rho_block), ("rho_error", self.rho_error)] {
            if !(r > -1.0 && r < 1.0) {
                return bad(format!("{name} must lie in (-1, 1)"));
            }
        }
        if self.min_total == 0 || self.min_total > self.max_total {
            return bad("totals need 0 < min_total <= max_total".into());
        }
        Ok(())
    }
}

/// Generating values behind a synthetic data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    /// Treatment effect per taxon.
    pub beta: Vec<f64>,
    /// Block effects, one `K`-vector per block.
    pub gamma: Vec<Vec<f64>>,
    pub theta: DMatrix<f64>,
    pub mu: Vec<f64>,
    /// Selected clusters (taxa `5c..5c+5`) and their shared effect.
    pub clusters: Vec<(usize, f64)>,
}

/// A stationary Gaussian AR(1) vector with `Cov(x_k, x_k') = var * rho^|k-k'|`.
pub fn ar1_draw<R: Rng + ?Sized>(k: usize, var: f64, rho: f64, rng: &mut R) -> Vec<f64> {
    let sd = var.sqrt();
    let innovation = sd * (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(k);
    let mut prev = sd * standard_normal(rng);
    out.push(prev);
    for _ in 1..k {
        prev = rho * prev + innovation * standard_normal(rng);
        out.push(prev);
    }
    out
}

/// A cluster effect drawn uniformly from `[-3, -1) U (1, 3]`.
fn cluster_effect<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let magnitude = 3.0 - 2.0 * rng.random::<f64>();
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

/// Draws one data set: sparse clustered effects, AR(1) block and sample noise, a linear
/// baseline from 1 to -1, a balanced 0/1 treatment within each block and multinomial counts.
pub fn generate_dataset<R: Rng + ?Sized>(
    scenario: &SimScenario,
    rng: &mut R,
) -> Result<(CountTable, ExperimentDesign, SimTruth)> {
    scenario.validate()?;
    let (k, n, q) = (scenario.n_taxa, scenario.n_samples, scenario.n_blocks);
    let per_block = n / q;

    let mut beta = vec![0.0; k];
    let mut available: Vec<usize> = (0..k / CLUSTER_SIZE).collect();
    let mut clusters = Vec::new();
    for _ in 0..scenario.n_clusters() {
        let c = available.remove(rng.random_range(0..available.len()));
        let v = cluster_effect(rng);
        for b in &mut beta[c * CLUSTER_SIZE..(c + 1) * CLUSTER_SIZE] {
            *b = v;
        }
        clusters.push((c, v));
    }

    let mu: Vec<f64> = (0..k)
        .map(|j| 1.0 - 2.0 * j as f64 / (k - 1) as f64)
        .collect();
    let gamma: Vec<Vec<f64>> = (0..q)
        .map(|_| ar1_draw(k, scenario.block_var, scenario.rho_block, rng))
        .collect();

    let block: Vec<usize> = (0..n).map(|i| i / per_block).collect();
    let mut x = vec![0.0; n];
    for r in 0..q {
        let mut treated: Vec<bool> = (0..per_block).map(|s| s < per_block / 2).collect();
        treated.shuffle(rng);
        for (s, t) in treated.into_iter().enumerate() {
            x[r * per_block + s] = if t { 1.0 } else { 0.0 };
        }
    }

    let mut theta = DMatrix::zeros(n, k);
    let mut counts = Vec::with_capacity(n * k);
    let mut phi = vec![0.0; k];
    for i in 0..n {
        let eps = ar1_draw(k, scenario.error_var, scenario.rho_error, rng);
        let row: Vec<f64> = (0..k)
            .map(|j| mu[j] + beta[j] * x[i] + gamma[block[i]][j] + eps[j])
            .collect();
        for j in 0..k {
            theta[(i, j)] = row[j];
        }
        softmax_into(&row, &mut phi);
        let total = rng.random_range(scenario.min_total..=scenario.max_total);
        counts.extend(multinomial(total, &phi, rng)?);
    }

    let sample_ids: Vec<String> = (1..=n).map(|i| format!("S{i}")).collect();
    let taxon_ids: Vec<String> = (1..=k).map(|j| format!("T{j}")).collect();
    let table = CountTable::new(counts, sample_ids.clone(), taxon_ids)?;
    let labels: Vec<String> = block.iter().map(|b| format!("B{}", b + 1)).collect();
    let design = ExperimentDesign::new(
        DMatrix::from_vec(n, 1, x),
        vec!["treatment".into()],
        vec![RandomFactor::from_labels("block", &labels)],
        sample_ids,
    )?;
    Ok((
        table,
        design,
        SimTruth {
            beta,
            gamma,
            theta,
            mu,
            clusters,
        },
    ))
}
