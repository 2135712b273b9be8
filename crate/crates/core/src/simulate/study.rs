//! Factorial benchmark: every (density, block variance, error variance) cell, replicated,
//! scored by each method's global test and, for the model fits, local metrics.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::permanova::MIN_PERMUTATIONS;
use super::{bray_curtis, generate_dataset, permanova, SimScenario, SimTruth};
use crate::analysis::{
    factor_correlation, global_test, local_tests, variance_decomposition, LocalTest,
};
use crate::config::{parse_key_values, ModelConfig, RunConfig, Variant};
use crate::engine::{run_chain, PosteriorArchive};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rand_dist::{derive_seed, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mimix,
    MimixWithoutFactors,
    Permanova,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::Mimix,
        Method::MimixWithoutFactors,
        Method::Permanova,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mimix => "mimix",
            Method::MimixWithoutFactors => "mimix-without-factors",
            Method::Permanova => "permanova",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown method `{s}`")))
    }
}

/// Local accuracy of the treatment effects; rates are `None` when the truth has no taxa of
/// that kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMetrics {
    pub rmse: f64,
    pub c95: f64,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
}

/// Scores intervals for covariate 0 against the true effects. Coverage uses the closed
/// interval; a true zero counts as negative when its interval contains zero.
pub fn local_metrics(beta: &[f64], tests: &[LocalTest]) -> Result<LocalMetrics> {
    let rows: Vec<&LocalTest> = tests.iter().filter(|t| t.covariate == 0).collect();
    if rows.len() != beta.len() {
        return Err(Error::Dimension(format!(
            "{} intervals for {} true effects",
            rows.len(),
            beta.len()
        )));
    }
    let k = beta.len() as f64;
    let mut sq = 0.0;
    let mut covered = 0usize;
    let (mut pos, mut tp, mut neg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for t in rows {
        let b = beta[t.taxon];
        sq += (t.mean - b).powi(2);
        if t.lower <= b && b <= t.upper {
            covered += 1;
        }
        if b != 0.0 {
            pos += 1;
            tp += usize::from(t.excludes_zero);
        } else {
            neg += 1;
            tn += usize::from(!t.excludes_zero);
        }
    }
    let rate = |hit: usize, of: usize| (of > 0).then(|| hit as f64 / of as f64);
    Ok(LocalMetrics {
        rmse: (sq / k).sqrt(),
        c95: covered as f64 / k,
        tpr: rate(tp, pos),
        tnr: rate(tn, neg),
    })
}

pub fn evaluate_local(truth: &SimTruth, archive: &PosteriorArchive) -> Result<LocalMetrics> {
    if archive.n_taxa != truth.beta.len() {
        return Err(Error::Dimension(format!(
            "archive has {} taxa but the truth has {}",
            archive.n_taxa,
            truth.beta.len()
        )));
    }
    local_metrics(&truth.beta, &local_tests(archive)?)
}

/// The benchmark grid and everything needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyGrid {
    /// Scenario fields other than the three crossed factors.
    pub base: SimScenario,
    pub densities: Vec<usize>,
    pub block_vars: Vec<f64>,
    pub error_vars: Vec<f64>,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub permutations: usize,
    /// Significance level of the PERMANOVA test.
    pub alpha: f64,
    /// Posterior-probability threshold of the model's global test.
    pub threshold: f64,
    pub model: ModelConfig,
}

impl Default for StudyGrid {
    fn default() -> Self {
        StudyGrid {
            base: SimScenario::default(),
            densities: vec![0, 5, 10],
            block_vars: vec![1.0, 4.0],
            error_vars: vec![1.0, 4.0, 9.0],
            replications: 50,
            methods: Method::ALL.to_vec(),
            seed: 1,
            permutations: 999,
            alpha: 0.05,
            threshold: crate::analysis::GLOBAL_THRESHOLD,
            model: ModelConfig::default(),
        }
    }
}

/// Grid keys with descriptions. Scenario keys other than the three crossed factors and every
/// model configuration key are also accepted.
pub const GRID_KEYS: &[(&str, &str)] = &[
    ("density", "comma list of effect densities in percent"),
    ("block_var", "comma list of block-effect variances"),
    ("error_var", "comma list of sample-error variances"),
    ("replications", "data sets per cell"),
    (
        "methods",
        "comma list of mimix, mimix-without-factors, permanova",
    ),
    ("permutations", "PERMANOVA permutations (at least 999)"),
    ("alpha", "PERMANOVA significance level"),
    (
        "threshold",
        "posterior probability needed to reject the global null",
    ),
];

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Validation(format!("invalid value `{s}` for `{key}`")))
        })
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Validation(format!(
            "`{key}` needs at least one value"
        )));
    }
    Ok(items)
}

fn scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Validation(format!("invalid value `{value}` for `{key}`")))
}

impl StudyGrid {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "density" => self.densities = list(key, value)?,
            "block_var" => self.block_vars = list(key, value)?,
            "error_var" => self.error_vars = list(key, value)?,
            "replications" => self.replications = scalar(key, value)?,
            "methods" => self.methods = list(key, value)?,
            "permutations" => self.permutations = scalar(key, value)?,
            "alpha" => self.alpha = scalar(key, value)?,
            "threshold" => self.threshold = scalar(key, value)?,
            "n_taxa" | "n_samples" | "n_blocks" | "rho" | "rho_block" | "rho_error"
            | "min_total" | "max_total" => self.base.set(key, value)?,
            "seed" => {
                self.seed = scalar(key, value)?;
                self.model.seed = self.seed;
            }
            _ => {
                let mut run = RunConfig {
                    model: self.model.clone(),
                    ..RunConfig::default()
                };
                run.set(key, value)?;
                self.model = run.model;
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut grid = StudyGrid::default();
        for (line, key, value) in parse_key_values(text, source)? {
            grid.set(&key, &value).map_err(|e| Error::Parse {
                path: source.to_string(),
                line,
                message: e.to_string(),
            })?;
        }
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Every crossed scenario in (density, block_var, error_var) order.
    pub fn cells(&self) -> Vec<SimScenario> {
        let mut out = Vec::new();
        for &density in &self.densities {
            for &block_var in &self.block_vars {
                for &error_var in &self.error_vars {
                    out.push(SimScenario {
                        density,
                        block_var,
                        error_var,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for cell in self.cells() {
            cell.validate()?;
        }
        if self.replications == 0 || self.methods.is_empty() {
            return Err(Error::Validation(
                "a study needs at least one replication and one method".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0)
            || !(self.threshold > 0.0 && self.threshold < 1.0)
        {
            return Err(Error::Validation(
                "alpha and threshold must lie in (0, 1)".into(),
            ));
        }
        if self.methods.contains(&Method::Permanova) && self.permutations < MIN_PERMUTATIONS {
            return Err(Error::Validation(format!(
                "PERMANOVA needs at least {} permutations",
                MIN_PERMUTATIONS
            )));
        }
        if self.methods.iter().any(|m| *m != Method::Permanova) {
            self.model.validate()?;
        }
        Ok(())
    }
}

/// One metric of one method on one replicate; `None` marks a not-applicable value.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub cell: usize,
    pub scenario: SimScenario,
    pub method: Method,
    pub metric: &'static str,
    pub value: Option<f64>,
    pub replicate: usize,
}

/// A replicate or method that failed; the rest of the grid still ran.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateFailure {
    pub cell: usize,
    pub replicate: usize,
    pub method: Option<Method>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResults {
    pub cells: Vec<SimScenario>,
    pub methods: Vec<Method>,
    pub rows: Vec<ReplicateRow>,
    pub failures: Vec<ReplicateFailure>,
}

/// Metrics reported for every method.
pub const GLOBAL_METRICS: &[&str] = &["global_reject", "global_statistic"];
/// Metrics reported for the model fits only.
pub const FIT_METRICS: &[&str] = &[
    "rmse",
    "c95",
    "tpr",
    "tnr",
    "eta_min",
    "eta_max",
    "corr_min_eigenvalue",
];

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl StudyResults {
    /// Values of one metric in one cell, skipping not-applicable entries.
    pub fn values(&self, cell: usize, method: Method, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.cell == cell && r.method == method && r.metric == metric)
            .filter_map(|r| r.value)
            .collect()
    }

    /// Mean of a metric in one cell; `None` when no replicate has a value.
    pub fn cell_mean(&self, cell: usize, method: Method, metric: &str) -> Option<f64> {
        let v = self.values(cell, method, metric);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Long format: one line per replicate, method and metric.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("density,block_var,error_var,method,metric,value,replicate\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.scenario.density,
                r.scenario.block_var,
                r.scenario.error_var,
                r.method.name(),
                r.metric,
                fmt_value(r.value),
                r.replicate + 1
            )
            .expect("string write");
        }
        s
    }

    /// Wide format: one line per cell with the replicate mean of every method and metric.
    pub fn summary_csv(&self) -> String {
        let mut columns = Vec::new();
        for &m in &self.methods {
            for &metric in GLOBAL_METRICS {
                columns.push((m, metric));
            }
            if m != Method::Permanova {
                for &metric in FIT_METRICS {
                    columns.push((m, metric));
                }
            }
        }
        let mut s = String::from("density,block_var,error_var,replicates");
        for (m, metric) in &columns {
            write!(s, ",{}.{}", m.name(), metric).expect("string write");
        }
        s.push('\n');
        for (c, cell) in self.cells.iter().enumerate() {
            let reps = self
                .rows
                .iter()
                .filter(|r| r.cell == c)
                .map(|r| r.replicate)
                .collect::<std::collections::BTreeSet<_>>()
                .len();
            write!(
                s,
                "{},{},{},{reps}",
                cell.density, cell.block_var, cell.error_var
            )
            .expect("string write");
            for (m, metric) in &columns {
                write!(s, ",{}", fmt_value(self.cell_mean(c, *m, metric))).expect("string write");
            }
            s.push('\n');
        }
        s
    }

    pub fn failures_csv(&self) -> String {
        let mut s = String::from("density,block_var,error_var,method,replicate,message\n");
        for f in &self.failures {
            let cell = &self.cells[f.cell];
            writeln!(
                s,
                "{},{},{},{},{},\"{}\"",
                cell.density,
                cell.block_var,
                cell.error_var,
                f.method.map_or("all", Method::name),
                f.replicate + 1,
                f.message.replace('"', "\"\"")
            )
            .expect("string write");
        }
        s
    }
}

fn smallest_eigenvalue(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

struct Outcome {
    rows: Vec<(Method, &'static str, Option<f64>)>,
    failures: Vec<(Option<Method>, String)>,
}

fn run_replicate(grid: &StudyGrid, scenario: &SimScenario, seed: u64) -> Outcome {
    let mut out = Outcome {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    let mut data_rng = RngStream::new(seed, 0, 0);
    let (table, design, truth) = match generate_dataset(scenario, &mut data_rng) {
        Ok(d) => d,
        Err(e) => {
            out.failures.push((None, e.to_string()));
            return out;
        }
    };
    for &method in &grid.methods {
        let result: Result<Vec<(&'static str, Option<f64>)>> = match method {
            Method::Permanova => {
                let mut rng = RngStream::new(seed, 0, 1);
                let blocks = &design.factors()[0].assignment;
                let x: Vec<f64> = design.covariates().column(0).iter().copied().collect();
                permanova(
                    &bray_curtis(&table),
                    &x,
                    Some(blocks),
                    grid.permutations,
                    &mut rng,
                )
                .map(|r| {
                    vec![
                        (
                            "global_reject",
                            Some(f64::from(u8::from(r.p_value < grid.alpha))),
                        ),
                        ("global_statistic", Some(r.p_value)),
                    ]
                })
            }
            Method::Mimix | Method::MimixWithoutFactors => {
                let config = ModelConfig {
                    variant: if method == Method::Mimix {
                        Variant::Factors
                    } else {
                        Variant::NoFactors
                    },
                    seed: derive_seed(seed, &[2]),
                    n_chains: 1,
                    ..grid.model.clone()
                };
                fit_metrics(&table, &design, &truth, &config, grid.threshold)
            }
        };
        match result {
            Ok(rows) => out
                .rows
                .extend(rows.into_iter().map(|(metric, v)| (method, metric, v))),
            Err(e) => out.failures.push((Some(method), e.to_string())),
        }
    }
    out
}

fn fit_metrics(
    table: &crate::data::CountTable,
    design: &crate::data::ExperimentDesign,
    truth: &SimTruth,
    config: &ModelConfig,
    threshold: f64,
) -> Result<Vec<(&'static str, Option<f64>)>> {
    let model = Model::new(table, design, config)?;
    let archive = run_chain(&model, config, 0)?;
    let global = global_test(&archive, 0, threshold)?;
    let local = evaluate_local(truth, &archive)?;
    let eta = variance_decomposition(&archive).eta;
    let corr = factor_correlation(&archive).correlation;
    Ok(vec![
        ("global_reject", Some(f64::from(u8::from(global.reject)))),
        ("global_statistic", Some(global.probability)),
        ("rmse", Some(local.rmse)),
        ("c95", Some(local.c95)),
        ("tpr", local.tpr),
        ("tnr", local.tnr),
        ("eta_min", eta.iter().copied().reduce(f64::min)),
        ("eta_max", eta.iter().copied().reduce(f64::max)),
        ("corr_min_eigenvalue", Some(smallest_eigenvalue(&corr))),
    ])
}

/// Runs every cell and replicate. Replicates run in parallel on the current rayon pool;
/// `on_done(finished, total)` is called as each one completes.
pub fn run_study(
    grid: &StudyGrid,
    on_done: &(dyn Fn(usize, usize) + Sync),
) -> Result<StudyResults> {
    grid.validate()?;
    let cells = grid.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..grid.replications).map(move |r| (c, r)))
        .collect();
    let total = jobs.len();
    let finished = std::sync::atomic::AtomicUsize::new(0);
    let outcomes: Vec<Outcome> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let seed = derive_seed(grid.seed, &[c as u64, r as u64]);
            let outcome = run_replicate(grid, &cells[c], seed);
            let done = finished.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            on_done(done, total);
            outcome
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&(cell, replicate), outcome) in jobs.iter().zip(outcomes) {
        rows.extend(
            outcome
                .rows
                .into_iter()
                .map(|(method, metric, value)| ReplicateRow {
                    cell,
                    scenario: cells[cell].clone(),
                    method,
                    metric,
                    value,
                    replicate,
                }),
        );
        failures.extend(
            outcome
                .failures
                .into_iter()
                .map(|(method, message)| ReplicateFailure {
                    cell,
                    replicate,
                    method,
                    message,
                }),
        );
    }
    Ok(StudyResults {
        cells,
        methods: grid.methods.clone(),
        rows,
        failures,
    })
}
