//! Fixed inputs of a fit: counts, design matrices, priors and dimensions.

use nalgebra::DMatrix;

use crate::config::{ModelConfig, Variant};
use crate::data::{CountTable, ExperimentDesign};
use crate::error::{Error, Result};

/// Prior hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    /// Inverse-gamma shape and scale shared by every variance.
    pub u0: f64,
    pub v0: f64,
    /// Gamma shape and rate for the Dirichlet-Laplace `nu`.
    pub c0: f64,
    pub d0: f64,
    /// Beta prior on covariate inclusion probabilities.
    pub a0: f64,
    pub b0: f64,
}

/// One random-effect factor in the nesting chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub assignment: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

impl Level {
    pub fn new(assignment: Vec<usize>, n_blocks: usize) -> Result<Self> {
        let mut members = vec![Vec::new(); n_blocks];
        for (i, &z) in assignment.iter().enumerate() {
            if z >= n_blocks {
                return Err(Error::Dimension(format!(
                    "block index {z} out of range {n_blocks}"
                )));
            }
            members[z].push(i);
        }
        Ok(Level {
            assignment,
            members,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.members.len()
    }
}

/// Everything the sampler conditions on.
#[derive(Debug, Clone)]
pub struct Model {
    pub(crate) y: DMatrix<f64>,
    pub(crate) totals: Vec<f64>,
    pub(crate) x: DMatrix<f64>,
    pub(crate) xtx: DMatrix<f64>,
    pub(crate) levels: Vec<Level>,
    pub(crate) variant: Variant,
    pub(crate) n_factors: usize,
    pub(crate) a_grid: Vec<f64>,
    pub(crate) priors: Priors,
}

impl Model {
    /// Pairs a count table with its design. Sample ids must agree row by row.
    pub fn new(
        table: &CountTable,
        design: &ExperimentDesign,
        config: &ModelConfig,
    ) -> Result<Self> {
        if table.n_samples() != design.n_samples() {
            return Err(Error::Dimension(format!(
                "count table has {} samples but design has {}",
                table.n_samples(),
                design.n_samples()
            )));
        }
        if let Some(i) =
            (0..table.n_samples()).find(|&i| table.sample_ids()[i] != design.sample_ids()[i])
        {
            return Err(Error::Validation(format!(
                "sample {} of the count table is '{}' but the design lists '{}'",
                i + 1,
                table.sample_ids()[i],
                design.sample_ids()[i]
            )));
        }
        let n = table.n_samples();
        let k = table.n_taxa();
        let y = DMatrix::from_fn(n, k, |i, j| table.get(i, j) as f64);
        let assignments = design
            .factors()
            .iter()
            .map(|f| (f.assignment.clone(), f.n_levels()))
            .collect();
        Model::from_parts(y, design.covariates().clone(), assignments, config)
    }

    /// Builds a model from raw matrices; `levels` holds `(assignment, n_blocks)` per factor.
    pub fn from_parts(
        y: DMatrix<f64>,
        x: DMatrix<f64>,
        levels: Vec<(Vec<usize>, usize)>,
        config: &ModelConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n = y.nrows();
        let k = y.ncols();
        if k < 2 {
            return Err(Error::Validation("need at least two taxa".into()));
        }
        if x.nrows() != n || x.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "covariates are {}x{} for {n} samples",
                x.nrows(),
                x.ncols()
            )));
        }
        let levels = levels
            .into_iter()
            .map(|(a, q)| {
                if a.len() != n {
                    return Err(Error::Dimension(format!(
                        "factor assignment of length {} for {n} samples",
                        a.len()
                    )));
                }
                Level::new(a, q)
            })
            .collect::<Result<Vec<_>>>()?;
        let n_factors = match config.variant {
            Variant::Factors => config.factors_for(n),
            Variant::NoFactors => k,
        };
        let (a0, b0) = config.inclusion_prior(n_factors);
        let xtx = x.transpose() * &x;
        let mut model = Model {
            y: DMatrix::zeros(n, k),
            totals: vec![0.0; n],
            x,
            xtx,
            levels,
            variant: config.variant,
            n_factors,
            a_grid: config.concentration_grid(k),
            priors: Priors {
                u0: config.u0,
                v0: config.v0,
                c0: config.c0,
                d0: config.d0,
                a0,
                b0,
            },
        };
        model.set_counts(y)?;
        Ok(model)
    }

    /// Replaces the counts, keeping every other input.
    pub fn set_counts(&mut self, y: DMatrix<f64>) -> Result<()> {
        if y.shape() != self.y.shape() {
            return Err(Error::Dimension(format!(
                "counts {:?} do not match {:?}",
                y.shape(),
                self.y.shape()
            )));
        }
        if y.iter().any(|v| !(*v >= 0.0 && v.fract() == 0.0)) {
            return Err(Error::Validation(
                "counts must be nonnegative integers".into(),
            ));
        }
        self.totals = y.row_iter().map(|r| r.sum()).collect();
        self.y = y;
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_taxa(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    /// `L`; equals `K` for the no-factors variant.
    pub fn n_factors(&self) -> usize {
        self.n_factors
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn priors(&self) -> &Priors {
        &self.priors
    }

    pub fn a_grid(&self) -> &[f64] {
        &self.a_grid
    }

    pub fn counts(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.x
    }
}
