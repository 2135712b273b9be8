//! Bayesian logistic-normal-multinomial mixed-effects model for microbiome
//! count data from designed experiments.
//!
//! Counts `Y_i ~ Multinomial(m_i, softmax(theta_i))` with
//! `theta_i = mu + Lambda f_i + delta_i` and factor scores
//! `f_i = b x_i + g_{z_i} + e_i`. Loadings carry a Dirichlet-Laplace prior and
//! the fixed effects `b` a spike-and-slab prior. Sampling is HMC for `theta_i`
//! inside a Gibbs sweep over everything else.

pub mod analysis;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod gibbs;
pub mod hmc;
pub mod model;
pub mod rand_dist;
pub mod simulate;
pub mod state;

#[cfg(test)]
pub(crate) mod testutil;

pub use config::{ModelConfig, RunConfig, Variant};
pub use data::{CountTable, Delimiter, DesignSpec, ExperimentDesign, RandomFactor};
pub use error::{Error, Result};
pub use model::Model;
pub use state::MarkovState;
