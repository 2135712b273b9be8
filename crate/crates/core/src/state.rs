//! One complete draw of every latent quantity.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::config::Variant;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rand_dist::{
    beta, dirichlet, exponential, gamma, inverse_gamma, multinomial, standard_normal,
};

/// Floor applied to Dirichlet weights so that `|lambda| / xi` and `ln xi` stay finite.
pub(crate) const XI_FLOOR: f64 = 1e-300;

/// Sampler state. `b` and `omega` are `L x p`; row `l` holds the fixed effects of factor `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovState {
    pub theta: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub lambda: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub tau: DVector<f64>,
    pub nu: f64,
    pub a: DVector<f64>,
    pub f: DMatrix<f64>,
    pub g: Vec<DMatrix<f64>>,
    pub b: DMatrix<f64>,
    pub omega: DMatrix<bool>,
    pub pi: DVector<f64>,
    pub sigma_sq: DVector<f64>,
    pub sigma_mu_sq: f64,
    pub sigma_g_sq: Vec<f64>,
    pub sigma_b_sq: f64,
}

impl MarkovState {
    /// Data-driven starting point: empirical log-ratios for `theta`, zero loadings,
    /// random factor scores and unit variances.
    pub fn initial<R: Rng + ?Sized>(model: &Model, rng: &mut R) -> Self {
        let (n, k, l, p) = (
            model.n_samples(),
            model.n_taxa(),
            model.n_factors(),
            model.n_covariates(),
        );
        let mut theta = DMatrix::zeros(n, k);
        for i in 0..n {
            let denom = model.totals[i] + 0.5 * k as f64;
            let row: Vec<f64> = (0..k)
                .map(|j| ((model.y[(i, j)] + 0.5) / denom).ln())
                .collect();
            let centre = row.iter().sum::<f64>() / k as f64;
            for j in 0..k {
                theta[(i, j)] = row[j] - centre;
            }
        }
        let mu = DVector::from_fn(k, |j, _| theta.column(j).mean());
        let factors = model.variant() == Variant::Factors;
        let dl = if factors { l } else { 0 };
        let a_init = model.a_grid[model.a_grid.len() / 2];
        let f = if factors {
            DMatrix::from_fn(n, l, |_, _| standard_normal(rng))
        } else {
            DMatrix::zeros(n, l)
        };
        let lambda = if factors {
            DMatrix::zeros(k, l)
        } else {
            DMatrix::identity(k, k)
        };
        MarkovState {
            theta,
            mu,
            lambda,
            psi: DMatrix::from_element(k, dl, 1.0),
            xi: DMatrix::from_element(k, dl, 1.0 / k as f64),
            tau: DVector::from_element(dl, k as f64 * a_init),
            nu: 1.0,
            a: DVector::from_element(dl, a_init),
            f,
            g: model
                .levels
                .iter()
                .map(|lv| DMatrix::zeros(lv.n_blocks(), l))
                .collect(),
            b: DMatrix::zeros(l, p),
            omega: DMatrix::from_element(l, p, false),
            pi: DVector::from_element(p, 0.5),
            sigma_sq: DVector::from_element(k, 1.0),
            sigma_mu_sq: 1.0,
            sigma_g_sq: vec![1.0; model.levels.len()],
            sigma_b_sq: 1.0,
        }
    }

    /// A draw from the joint prior (counts are not touched).
    pub fn draw_prior<R: Rng + ?Sized>(model: &Model, rng: &mut R) -> Result<Self> {
        let (n, k, l, p) = (
            model.n_samples(),
            model.n_taxa(),
            model.n_factors(),
            model.n_covariates(),
        );
        let pr = model.priors;
        let ig = |rng: &mut R| inverse_gamma(pr.u0, pr.v0, rng);
        let sigma_sq =
            DVector::from_iterator(k, (0..k).map(|_| ig(rng)).collect::<Result<Vec<_>>>()?);
        let sigma_mu_sq = ig(rng)?;
        let sigma_g_sq = model
            .levels
            .iter()
            .map(|_| ig(rng))
            .collect::<Result<Vec<_>>>()?;
        let sigma_b_sq = ig(rng)?;
        let mu =
            DVector::from_iterator(k, (0..k).map(|_| sigma_mu_sq.sqrt() * standard_normal(rng)));

        let factors = model.variant() == Variant::Factors;
        let dl = if factors { l } else { 0 };
        let nu = gamma(pr.c0, pr.d0, rng)?;
        let mut a = DVector::zeros(dl);
        let mut tau = DVector::zeros(dl);
        let mut xi = DMatrix::zeros(k, dl);
        let mut psi = DMatrix::zeros(k, dl);
        let mut lambda = if factors {
            DMatrix::zeros(k, l)
        } else {
            DMatrix::identity(k, k)
        };
        for c in 0..dl {
            a[c] = model.a_grid[rng.random_range(0..model.a_grid.len())];
            tau[c] = gamma(k as f64 * a[c], nu, rng)?;
            let w = dirichlet(&vec![a[c]; k], rng)?;
            let floored: Vec<f64> = w.iter().map(|v| v.max(XI_FLOOR)).collect();
            let total: f64 = floored.iter().sum();
            for j in 0..k {
                xi[(j, c)] = floored[j] / total;
                psi[(j, c)] = exponential(0.5, rng)?;
                lambda[(j, c)] = (psi[(j, c)]).sqrt() * xi[(j, c)] * tau[c] * standard_normal(rng);
            }
        }

        let pi = DVector::from_iterator(
            p,
            (0..p)
                .map(|_| beta(pr.a0, pr.b0, rng))
                .collect::<Result<Vec<_>>>()?,
        );
        let mut omega = DMatrix::from_element(l, p, false);
        let mut b = DMatrix::zeros(l, p);
        for r in 0..l {
            for j in 0..p {
                omega[(r, j)] = rng.random::<f64>() < pi[j];
                b[(r, j)] = sigma_b_sq.sqrt() * standard_normal(rng);
            }
        }
        let g: Vec<DMatrix<f64>> = model
            .levels
            .iter()
            .zip(&sigma_g_sq)
            .map(|(lv, s2)| {
                DMatrix::from_fn(lv.n_blocks(), l, |_, _| s2.sqrt() * standard_normal(rng))
            })
            .collect();

        let mut state = MarkovState {
            theta: DMatrix::zeros(n, k),
            mu,
            lambda,
            psi,
            xi,
            tau,
            nu,
            a,
            f: DMatrix::zeros(n, l),
            g,
            b,
            omega,
            pi,
            sigma_sq,
            sigma_mu_sq,
            sigma_g_sq,
            sigma_b_sq,
        };
        let mut f = state.factor_prior_mean(model);
        if factors {
            f.iter_mut().for_each(|v| *v += standard_normal(rng));
        }
        state.f = f;
        let lf = state.lambda_f(model);
        for i in 0..n {
            for j in 0..k {
                state.theta[(i, j)] =
                    state.mu[j] + lf[(i, j)] + state.sigma_sq[j].sqrt() * standard_normal(rng);
            }
        }
        Ok(state)
    }

    /// `b * omega`, elementwise.
    pub fn b_tilde(&self) -> DMatrix<f64> {
        self.b.zip_map(&self.omega, |b, w| if w { b } else { 0.0 })
    }

    /// Taxon-level fixed effects `beta = Lambda b~` (`K x p`).
    pub fn beta(&self) -> DMatrix<f64> {
        &self.lambda * self.b_tilde()
    }

    /// Sum of the random effects of sample `i`'s blocks across the nesting chain (`n x L`),
    /// optionally skipping one level.
    pub(crate) fn random_effect_sum(&self, model: &Model, skip: Option<usize>) -> DMatrix<f64> {
        let (n, l) = (model.n_samples(), model.n_factors());
        let mut out = DMatrix::zeros(n, l);
        for (r, lv) in model.levels.iter().enumerate() {
            if Some(r) == skip {
                continue;
            }
            for (i, &z) in lv.assignment.iter().enumerate() {
                for c in 0..l {
                    out[(i, c)] += self.g[r][(z, c)];
                }
            }
        }
        out
    }

    /// `X b~'` as an `n x L` matrix.
    pub(crate) fn fixed_part(&self, model: &Model) -> DMatrix<f64> {
        &model.x * self.b_tilde().transpose()
    }

    /// Prior mean of the factor scores, `b~ x_i + sum_r g_r[z_ir]` (`n x L`).
    pub fn factor_prior_mean(&self, model: &Model) -> DMatrix<f64> {
        self.fixed_part(model) + self.random_effect_sum(model, None)
    }

    /// `F Lambda'` (`n x K`); for the no-factors variant this is `F` itself.
    pub fn lambda_f(&self, model: &Model) -> DMatrix<f64> {
        match model.variant() {
            Variant::Factors => &self.f * self.lambda.transpose(),
            Variant::NoFactors => self.f.clone(),
        }
    }

    /// Checks the structural invariants and that every entry is finite.
    pub fn validate(&self, model: &Model) -> Result<()> {
        let (n, k, l, p) = (
            model.n_samples(),
            model.n_taxa(),
            model.n_factors(),
            model.n_covariates(),
        );
        let shapes_ok = self.theta.shape() == (n, k)
            && self.mu.len() == k
            && self.lambda.shape() == (k, l)
            && self.f.shape() == (n, l)
            && self.b.shape() == (l, p)
            && self.omega.shape() == (l, p)
            && self.pi.len() == p
            && self.sigma_sq.len() == k
            && self.g.len() == model.levels.len()
            && self.sigma_g_sq.len() == model.levels.len()
            && self
                .g
                .iter()
                .zip(&model.levels)
                .all(|(g, lv)| g.shape() == (lv.n_blocks(), l));
        if !shapes_ok {
            return Err(Error::Dimension(
                "state dimensions do not match the model".into(),
            ));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        let all_finite = finite(&self.theta)
            && self.mu.iter().all(|v| v.is_finite())
            && finite(&self.lambda)
            && finite(&self.psi)
            && finite(&self.xi)
            && self.tau.iter().all(|v| v.is_finite())
            && self.nu.is_finite()
            && finite(&self.f)
            && self.g.iter().all(finite)
            && finite(&self.b);
        if !all_finite {
            return Err(Error::Numerical("state has non-finite entries".into()));
        }
        let positive = self.sigma_sq.iter().all(|v| *v > 0.0 && v.is_finite())
            && self.sigma_mu_sq > 0.0
            && self.sigma_b_sq > 0.0
            && self.sigma_g_sq.iter().all(|v| *v > 0.0)
            && self.tau.iter().all(|v| *v > 0.0)
            && self.nu > 0.0
            && self.pi.iter().all(|v| *v > 0.0 && *v < 1.0);
        if !positive {
            return Err(Error::Numerical(
                "state has nonpositive scale parameters".into(),
            ));
        }
        Ok(())
    }
}

/// Draws `Y_i ~ Multinomial(m_i, softmax(theta_i))` for every sample.
pub fn simulate_counts<R: Rng + ?Sized>(
    theta: &DMatrix<f64>,
    totals: &[f64],
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (n, k) = theta.shape();
    let mut y = DMatrix::zeros(n, k);
    let mut row = vec![0.0; k];
    let mut phi = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            row[j] = theta[(i, j)];
        }
        crate::data::softmax_into(&row, &mut phi);
        let counts = multinomial(totals[i] as u64, &phi, rng)?;
        for j in 0..k {
            y[(i, j)] = counts[j] as f64;
        }
    }
    Ok(y)
}
