//! Model configuration and its plain-text `key = value` form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::{Delimiter, DesignSpec};
use crate::error::{Error, Result};

/// Which loading structure the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Sparse factor loadings with a Dirichlet-Laplace prior.
    Factors,
    /// Loadings fixed to the identity; every taxon gets its own effects.
    NoFactors,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Factors => "factors",
            Variant::NoFactors => "no-factors",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factors" | "with-factors" | "mimix" => Ok(Variant::Factors),
            "no-factors" | "without-factors" | "mimix-without-factors" => Ok(Variant::NoFactors),
            other => Err(Error::Validation(format!("unknown variant `{other}`"))),
        }
    }
}

/// Prior hyperparameters, sampler tuning and chain controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of latent factors; `None` means one per sample.
    pub n_factors: Option<usize>,
    /// Inverse-gamma shape of every variance prior.
    pub u0: f64,
    /// Inverse-gamma scale of every variance prior.
    pub v0: f64,
    /// Gamma shape of the global-scale rate prior.
    pub c0: f64,
    /// Gamma rate of the global-scale rate prior.
    pub d0: f64,
    /// Prior probability that a covariate is active on at least one factor.
    pub inclusion_prob: f64,
    /// Support of the Dirichlet concentration; `None` uses the default grid for K.
    pub a_grid: Option<Vec<f64>>,
    pub hmc_epsilon: f64,
    pub hmc_steps: usize,
    pub accept_low: f64,
    pub accept_high: f64,
    pub adapt_window: usize,
    /// Adapt one step size per sample instead of a shared one.
    pub per_sample_epsilon: bool,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_chains: usize,
    pub variant: Variant,
    /// Keep every retained loading matrix, not just the running mean.
    pub retain_lambda: bool,
    /// Maximum number of replicate log-ratio draws kept for predictive checks.
    pub ppc_draws: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_factors: None,
            u0: 1.0,
            v0: 1.0,
            c0: 1.0,
            d0: 1.0,
            inclusion_prob: 0.5,
            a_grid: None,
            hmc_epsilon: 0.01,
            hmc_steps: 25,
            accept_low: 0.25,
            accept_high: 0.45,
            adapt_window: 100,
            per_sample_epsilon: false,
            iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 1,
            n_chains: 1,
            variant: Variant::Factors,
            retain_lambda: false,
            ppc_draws: 200,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_factors == Some(0) {
            return bad("n_factors must be at least 1".into());
        }
        if !(self.inclusion_prob > 0.0 && self.inclusion_prob < 1.0) {
            return bad(format!(
                "inclusion_prob must lie in (0, 1), got {}",
                self.inclusion_prob
            ));
        }
        for (name, v) in [
            ("u0", self.u0),
            ("v0", self.v0),
            ("c0", self.c0),
            ("d0", self.d0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(grid) = &self.a_grid {
            if grid.is_empty() || grid.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
                return bad("a_grid entries must lie in (0, 1)".into());
            }
        }
        if !(self.hmc_epsilon > 0.0 && self.hmc_epsilon.is_finite()) {
            return bad("hmc_epsilon must be positive".into());
        }
        if self.hmc_steps == 0 {
            return bad("hmc_steps must be at least 1".into());
        }
        if !(0.0 < self.accept_low && self.accept_low < self.accept_high && self.accept_high < 1.0)
        {
            return bad("acceptance band must satisfy 0 < accept_low < accept_high < 1".into());
        }
        if self.adapt_window == 0 {
            return bad("adapt_window must be at least 1".into());
        }
        if self.iterations == 0 || self.iterations <= self.burn_in {
            return bad(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            ));
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if self.n_chains == 0 {
            return bad("n_chains must be at least 1".into());
        }
        Ok(())
    }

    /// Number of factors for a data set with `n` samples.
    pub fn factors_for(&self, n: usize) -> usize {
        self.n_factors.unwrap_or(n)
    }

    /// Beta prior `(a0, b0)` on covariate inclusion with `n_slots` factor slots.
    pub fn inclusion_prior(&self, n_slots: usize) -> (f64, f64) {
        let c = self.inclusion_prob;
        (1.0, (1.0 - c) / c * n_slots as f64)
    }

    /// The concentration grid used for `n_taxa` taxa.
    pub fn concentration_grid(&self, n_taxa: usize) -> Vec<f64> {
        match &self.a_grid {
            Some(g) => g.clone(),
            None => default_concentration_grid(n_taxa),
        }
    }

    /// Number of draws kept per chain after burn-in and thinning.
    pub fn retained_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// `{1/K, 0.05, 0.10, ..., 0.95}`, sorted and deduplicated.
pub fn default_concentration_grid(n_taxa: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = (1..=19).map(|i| i as f64 * 0.05).collect();
    let inv = 1.0 / n_taxa.max(1) as f64;
    if inv < 1.0 && !grid.iter().any(|g| (g - inv).abs() < 1e-12) {
        grid.push(inv);
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    grid
}

/// Every configuration key with a one-line description, in file order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    (
        "n_factors",
        "number of latent factors L (default: number of samples)",
    ),
    (
        "u0",
        "inverse-gamma shape for all variance priors (default 1)",
    ),
    (
        "v0",
        "inverse-gamma scale for all variance priors (default 1)",
    ),
    (
        "c0",
        "gamma shape of the global-scale rate prior (default 1)",
    ),
    (
        "d0",
        "gamma rate of the global-scale rate prior (default 1)",
    ),
    (
        "inclusion_prob",
        "prior probability a covariate is active, in (0,1) (default 0.5)",
    ),
    (
        "a_grid",
        "comma list of Dirichlet concentrations in (0,1) (default 1/K,0.05,...,0.95)",
    ),
    ("hmc_epsilon", "initial leapfrog step size (default 0.01)"),
    ("hmc_steps", "leapfrog steps per HMC proposal (default 25)"),
    (
        "accept_low",
        "lower edge of the target acceptance band (default 0.25)",
    ),
    (
        "accept_high",
        "upper edge of the target acceptance band (default 0.45)",
    ),
    (
        "adapt_window",
        "burn-in iterations between step-size adaptations (default 100)",
    ),
    (
        "per_sample_epsilon",
        "adapt one step size per sample (default false)",
    ),
    (
        "iterations",
        "total iterations per chain including burn-in (default 10000)",
    ),
    ("burn_in", "burn-in iterations discarded (default 5000)"),
    ("thin", "keep every thin-th post-burn-in draw (default 1)"),
    ("seed", "seed for every random stream (default 1)"),
    ("n_chains", "number of independent chains (default 1)"),
    ("variant", "factors | no-factors (default factors)"),
    (
        "retain_lambda",
        "keep every retained loading matrix (default false)",
    ),
    (
        "ppc_draws",
        "replicate draws kept for predictive checks (default 200)",
    ),
    ("design.covariates", "comma list of numeric design columns"),
    (
        "design.interactions",
        "comma list of products, e.g. nutrient*exclusion",
    ),
    (
        "design.factors",
        "comma list of random-effect factors, outermost first",
    ),
    ("input.delimiter", "auto | tab | comma (default auto)"),
];

/// Everything a fit needs besides the data: model settings and design column roles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub design: DesignSpec,
    pub delimiter: Delimiter,
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Validation(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Validation(format!(
            "invalid boolean `{value}` for `{key}`"
        ))),
    }
}

/// Parses `key = value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str, source: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            message: format!("expected `key = value`, found `{line}`"),
        })?;
        out.push((i + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (line, key, value) in parse_key_values(text, source)? {
            cfg.set(&key, &value).map_err(|e| Error::Parse {
                path: source.to_string(),
                line,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Sets one key; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "n_factors" => {
                m.n_factors = if value == "auto" {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "u0" => m.u0 = parse_value(key, value)?,
            "v0" => m.v0 = parse_value(key, value)?,
            "c0" => m.c0 = parse_value(key, value)?,
            "d0" => m.d0 = parse_value(key, value)?,
            "inclusion_prob" => m.inclusion_prob = parse_value(key, value)?,
            "a_grid" => {
                m.a_grid = if value == "auto" {
                    None
                } else {
                    Some(
                        parse_list(value)
                            .iter()
                            .map(|v| parse_value(key, v))
                            .collect::<Result<_>>()?,
                    )
                }
            }
            "hmc_epsilon" => m.hmc_epsilon = parse_value(key, value)?,
            "hmc_steps" => m.hmc_steps = parse_value(key, value)?,
            "accept_low" => m.accept_low = parse_value(key, value)?,
            "accept_high" => m.accept_high = parse_value(key, value)?,
            "adapt_window" => m.adapt_window = parse_value(key, value)?,
            "per_sample_epsilon" => m.per_sample_epsilon = parse_bool(key, value)?,
            "iterations" => m.iterations = parse_value(key, value)?,
            "burn_in" => m.burn_in = parse_value(key, value)?,
            "thin" => m.thin = parse_value(key, value)?,
            "seed" => m.seed = parse_value(key, value)?,
            "n_chains" => m.n_chains = parse_value(key, value)?,
            "variant" => m.variant = value.parse()?,
            "retain_lambda" => m.retain_lambda = parse_bool(key, value)?,
            "ppc_draws" => m.ppc_draws = parse_value(key, value)?,
            "design.covariates" => self.design.covariates = parse_list(value),
            "design.interactions" => {
                self.design.interactions = parse_list(value)
                    .iter()
                    .map(|term| {
                        term.split_once('*')
                            .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                            .ok_or_else(|| {
                                Error::Validation(format!(
                                    "interaction `{term}` must look like a*b"
                                ))
                            })
                    })
                    .collect::<Result<_>>()?
            }
            "design.factors" => self.design.factors = parse_list(value),
            "input.delimiter" => self.delimiter = value.parse()?,
            other => return Err(Error::Validation(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_kv_string(&self) -> String {
        let m = &self.model;
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert(
            "n_factors",
            m.n_factors.map_or("auto".into(), |l| l.to_string()),
        );
        map.insert("u0", fmt_f64(m.u0));
        map.insert("v0", fmt_f64(m.v0));
        map.insert("c0", fmt_f64(m.c0));
        map.insert("d0", fmt_f64(m.d0));
        map.insert("inclusion_prob", fmt_f64(m.inclusion_prob));
        map.insert(
            "a_grid",
            m.a_grid.as_ref().map_or("auto".into(), |g| {
                g.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
            }),
        );
        map.insert("hmc_epsilon", fmt_f64(m.hmc_epsilon));
        map.insert("hmc_steps", m.hmc_steps.to_string());
        map.insert("accept_low", fmt_f64(m.accept_low));
        map.insert("accept_high", fmt_f64(m.accept_high));
        map.insert("adapt_window", m.adapt_window.to_string());
        map.insert("per_sample_epsilon", m.per_sample_epsilon.to_string());
        map.insert("iterations", m.iterations.to_string());
        map.insert("burn_in", m.burn_in.to_string());
        map.insert("thin", m.thin.to_string());
        map.insert("seed", m.seed.to_string());
        map.insert("n_chains", m.n_chains.to_string());
        map.insert("variant", m.variant.as_str().into());
        map.insert("retain_lambda", m.retain_lambda.to_string());
        map.insert("ppc_draws", m.ppc_draws.to_string());
        map.insert("design.covariates", self.design.covariates.join(","));
        map.insert(
            "design.interactions",
            self.design
                .interactions
                .iter()
                .map(|(a, b)| format!("{a}*{b}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("design.factors", self.design.factors.join(","));
        map.insert(
            "input.delimiter",
            match self.delimiter {
                Delimiter::Tab => "tab",
                Delimiter::Comma => "comma",
                Delimiter::Auto => "auto",
            }
            .into(),
        );
        let mut out = String::new();
        for (key, _) in CONFIG_KEYS {
            let _ = writeln!(out, "{key} = {}", map[key]);
        }
        out
    }
}

/// Shortest decimal form that round-trips.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inclusion_prior_matches_closed_form() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.inclusion_prior(40), (1.0, 40.0));
        let cfg = ModelConfig {
            inclusion_prob: 0.2,
            ..Default::default()
        };
        let (a0, b0) = cfg.inclusion_prior(10);
        assert_eq!(a0, 1.0);
        assert!((b0 - 40.0).abs() < 1e-12);
        // Pr(S > 0) under the beta-binomial equals c when a0 = 1.
        let ratio: f64 = (0..10)
            .map(|i| (b0 + i as f64) / (b0 + 1.0 + i as f64))
            .product();
        assert!((1.0 - ratio - 0.2).abs() < 1e-12, "{}", 1.0 - ratio);
    }

    #[test]
    fn default_grid_contains_inverse_k() {
        let g = default_concentration_grid(100);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 0.01).abs() < 1e-15);
        assert!((g[19] - 0.95).abs() < 1e-12);
        // 1/20 coincides with 0.05 and is not duplicated.
        assert_eq!(default_concentration_grid(20).len(), 19);
    }

    #[test]
    fn unknown_key_is_error() {
        let err = RunConfig::parse("iterations = 10\nbogus = 1\n", "cfg").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn every_key_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("n_factors", "7").unwrap();
        cfg.set("a_grid", "0.1, 0.5").unwrap();
        cfg.set("design.covariates", "a,b").unwrap();
        cfg.set("design.interactions", "a*b").unwrap();
        cfg.set("design.factors", "site, block").unwrap();
        cfg.set("variant", "no-factors").unwrap();
        cfg.set("hmc_epsilon", "0.0123").unwrap();
        let text = cfg.to_kv_string();
        assert_eq!(text.lines().count(), CONFIG_KEYS.len());
        let back = RunConfig::parse(&text, "round").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_rejects_bad_chain_controls() {
        let zero = ModelConfig {
            iterations: 0,
            burn_in: 0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
        let c = ModelConfig {
            inclusion_prob: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
