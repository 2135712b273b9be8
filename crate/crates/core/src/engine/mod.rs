//! Chain orchestration: burn-in with step-size adaptation, thinning, retries on
//! numerical failure, checkpoints and multi-chain execution.

mod archive;
pub(crate) mod binio;
mod checkpoint;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use archive::{
    loading_correlation, AdaptationRecord, Draws, PosteriorArchive, PredictiveDraws, RunManifest,
};
pub use checkpoint::{state_bytes, state_from_bytes};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gibbs::{sweep, SweepStreams};
use crate::hmc::{adapt_epsilon, HmcSettings};
use crate::model::Model;
use crate::state::MarkovState;

/// Attempts per iteration before a chain gives up.
pub const MAX_RETRIES: usize = 3;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of every setting that changes the sampled sequence. `iterations` is left out so a
/// checkpoint can be extended; `n_chains` because each chain is addressed separately.
pub fn config_hash(config: &ModelConfig) -> String {
    let mut c = config.clone();
    c.iterations = 0;
    c.n_chains = 0;
    hex(&Sha256::digest(format!("{c:?}").as_bytes())[..16])
}

/// Hash of counts, covariates and random-effect assignments.
pub fn data_hash(model: &Model) -> String {
    let mut h = Sha256::new();
    for dim in [
        model.n_samples(),
        model.n_taxa(),
        model.n_covariates(),
        model.n_factors(),
    ] {
        h.update((dim as u64).to_le_bytes());
    }
    for v in model.counts().iter().chain(model.covariates().iter()) {
        h.update(v.to_le_bytes());
    }
    for lv in model.levels() {
        h.update((lv.n_blocks() as u64).to_le_bytes());
        for z in &lv.assignment {
            h.update((*z as u64).to_le_bytes());
        }
    }
    hex(&h.finalize()[..16])
}

/// True when iteration `t` (1-based) is kept.
pub fn is_retained(t: usize, burn_in: usize, thin: usize) -> bool {
    t > burn_in && (t - burn_in) % thin == 0
}

/// Retained-draw indices that also feed predictive checks: `floor(j R / P)` for `j < P`.
pub fn predictive_indices(retained: usize, max_draws: usize) -> Vec<usize> {
    let p = max_draws.min(retained);
    (0..p).map(|j| j * retained / p).collect()
}

/// One chain, advanced sweep by sweep.
#[derive(Debug, Clone)]
pub struct ChainRunner<'a> {
    model: &'a Model,
    config: ModelConfig,
    chain: u64,
    state: MarkovState,
    streams: SweepStreams,
    epsilon: Vec<f64>,
    iteration: usize,
    window_accepts: Vec<usize>,
    window_len: usize,
    sampling_accepts: usize,
    sampling_proposals: usize,
    retries: usize,
    retained: usize,
    predictive: Vec<usize>,
    archive: PosteriorArchive,
    wall_seconds: f64,
    checkpoint_path: Option<PathBuf>,
}

impl<'a> ChainRunner<'a> {
    /// Starts chain `chain` from the data-driven initial state.
    pub fn new(model: &'a Model, config: &ModelConfig, chain: u64) -> Result<Self> {
        config.validate()?;
        let n = model.n_samples();
        let mut streams = SweepStreams::new(config.seed, chain, n);
        let state = MarkovState::initial(model, &mut streams.gibbs);
        state.validate(model)?;
        Ok(ChainRunner {
            model,
            config: config.clone(),
            chain,
            state,
            streams,
            epsilon: vec![config.hmc_epsilon; n],
            iteration: 0,
            window_accepts: vec![0; n],
            window_len: 0,
            sampling_accepts: 0,
            sampling_proposals: 0,
            retries: 0,
            retained: 0,
            predictive: predictive_indices(config.retained_draws(), config.ppc_draws),
            archive: PosteriorArchive::empty(model, config.retain_lambda),
            wall_seconds: 0.0,
            checkpoint_path: None,
        })
    }

    /// Path named in the abort message when the chain fails.
    pub fn set_checkpoint_path(&mut self, path: impl Into<PathBuf>) {
        self.checkpoint_path = Some(path.into());
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn state(&self) -> &MarkovState {
        &self.state
    }

    pub fn epsilon(&self) -> &[f64] {
        &self.epsilon
    }

    pub fn archive(&self) -> &PosteriorArchive {
        &self.archive
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// One sweep with adaptation and recording. A failed sweep is retried from the previous
    /// state up to [`MAX_RETRIES`] times with the streams advanced.
    pub fn step(&mut self) -> Result<()> {
        if self.is_finished() {
            return Err(Error::Validation("chain already finished".into()));
        }
        let started = Instant::now();
        let t = self.iteration + 1;
        let mut attempt = 0;
        let accepted = loop {
            let mut trial = self.state.clone();
            match sweep(
                &mut trial,
                self.model,
                &self.epsilon,
                self.config.hmc_steps,
                &mut self.streams,
            ) {
                Ok(acc) => {
                    self.state = trial;
                    break acc;
                }
                Err(e) => {
                    attempt += 1;
                    self.retries += 1;
                    if attempt >= MAX_RETRIES {
                        let last_good = match &self.checkpoint_path {
                            Some(p) => format!("; last good checkpoint: {}", p.display()),
                            None => String::new(),
                        };
                        return Err(Error::Aborted {
                            iteration: t,
                            message: format!("{e} after {attempt} attempts{last_good}"),
                        });
                    }
                }
            }
        };
        self.iteration = t;

        if t <= self.config.burn_in {
            for (w, a) in self.window_accepts.iter_mut().zip(&accepted) {
                *w += *a as usize;
            }
            self.window_len += 1;
            if self.window_len == self.config.adapt_window {
                self.adapt(t);
            }
        } else {
            self.sampling_accepts += accepted.iter().filter(|a| **a).count();
            self.sampling_proposals += accepted.len();
        }

        if is_retained(t, self.config.burn_in, self.config.thin) {
            let keep_predictive = self.predictive.binary_search(&self.retained).is_ok();
            self.archive
                .record(&self.state, self.model, keep_predictive);
            self.retained += 1;
        }
        self.wall_seconds += started.elapsed().as_secs_f64();
        Ok(())
    }

    fn adapt(&mut self, t: usize) {
        let n = self.epsilon.len();
        let base = HmcSettings::from_config(&self.config);
        let window = self.window_len as f64;
        let pooled = self.window_accepts.iter().sum::<usize>() as f64 / (window * n as f64);
        if self.config.per_sample_epsilon {
            for i in 0..n {
                let rate = self.window_accepts[i] as f64 / window;
                self.epsilon[i] = adapt_epsilon(
                    rate,
                    &HmcSettings {
                        epsilon: self.epsilon[i],
                        ..base
                    },
                )
                .epsilon;
            }
        } else {
            let next = adapt_epsilon(
                pooled,
                &HmcSettings {
                    epsilon: self.epsilon[0],
                    ..base
                },
            )
            .epsilon;
            self.epsilon.iter_mut().for_each(|e| *e = next);
        }
        self.archive.adaptation.push(AdaptationRecord {
            iteration: t,
            acceptance: pooled,
            epsilon: self.epsilon.iter().sum::<f64>() / n as f64,
        });
        self.window_accepts.iter_mut().for_each(|w| *w = 0);
        self.window_len = 0;
    }

    /// Steps until `iteration` (or the end of the chain).
    pub fn run_until(&mut self, iteration: usize) -> Result<()> {
        while self.iteration < iteration.min(self.config.iterations) {
            self.step()?;
        }
        Ok(())
    }

    /// Runs any remaining iterations and returns the archive with its manifest attached.
    pub fn finish(mut self) -> Result<PosteriorArchive> {
        self.run_until(self.config.iterations)?;
        let mut warnings = Vec::new();
        let (n, k, l) = (
            self.model.n_samples(),
            self.model.n_taxa(),
            self.model.n_factors(),
        );
        if self.model.variant() == crate::config::Variant::Factors && l > n.min(k) {
            warnings.push(format!("n_factors {l} exceeds min(n, K) = {}", n.min(k)));
        }
        if self.retries > 0 {
            warnings.push(format!(
                "{} sweeps were retried after numerical failures",
                self.retries
            ));
        }
        let shared = !self.config.per_sample_epsilon;
        let manifest = RunManifest {
            seed: self.config.seed,
            chain: self.chain,
            config_hash: config_hash(&self.config),
            data_hash: data_hash(self.model),
            iterations: self.config.iterations,
            burn_in: self.config.burn_in,
            thin: self.config.thin,
            acceptance_rate: if self.sampling_proposals == 0 {
                f64::NAN
            } else {
                self.sampling_accepts as f64 / self.sampling_proposals as f64
            },
            final_epsilon: if shared {
                vec![self.epsilon[0]]
            } else {
                self.epsilon.clone()
            },
            wall_seconds: self.wall_seconds,
            retries: self.retries,
            warnings,
        };
        let mut archive = self.archive;
        archive.manifests.push(manifest);
        Ok(archive)
    }

    /// Writes a checkpoint of the full chain position.
    pub fn checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::write(self, path)
    }

    /// Reopens a chain from a checkpoint written for the same model and configuration.
    /// `config.iterations` may differ from the one in force when it was written.
    pub fn restore(model: &'a Model, config: &ModelConfig, path: &Path) -> Result<Self> {
        checkpoint::read(model, config, path)
    }
}

/// Runs one complete chain.
pub fn run_chain(model: &Model, config: &ModelConfig, chain: u64) -> Result<PosteriorArchive> {
    ChainRunner::new(model, config, chain)?.finish()
}

/// Runs `config.n_chains` chains in parallel; chain `c` uses stream id `c`. A failing chain
/// does not stop its siblings.
pub fn run_parallel_chains(
    model: &Model,
    config: &ModelConfig,
) -> Result<Vec<Result<PosteriorArchive>>> {
    config.validate()?;
    Ok((0..config.n_chains as u64)
        .into_par_iter()
        .map(|c| run_chain(model, config, c))
        .collect())
}
