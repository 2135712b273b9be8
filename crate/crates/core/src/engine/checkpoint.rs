//! Versioned binary checkpoint of a running chain.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use super::binio::{Decoder, Encoder};
use super::{config_hash, data_hash, predictive_indices, ChainRunner};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gibbs::SweepStreams;
use crate::model::Model;
use crate::rand_dist::RngStream;
use crate::state::MarkovState;

const MAGIC: &[u8; 8] = b"MIMIXCKP";
const VERSION: u64 = 1;

fn encode_state<W: Write>(s: &MarkovState, enc: &mut Encoder<W>) -> Result<()> {
    enc.matrix(&s.theta)?;
    enc.f64s(s.mu.as_slice())?;
    enc.matrix(&s.lambda)?;
    enc.matrix(&s.psi)?;
    enc.matrix(&s.xi)?;
    enc.f64s(s.tau.as_slice())?;
    enc.f64(s.nu)?;
    enc.f64s(s.a.as_slice())?;
    enc.matrix(&s.f)?;
    enc.usize(s.g.len())?;
    for g in &s.g {
        enc.matrix(g)?;
    }
    enc.matrix(&s.b)?;
    enc.bool_matrix(&s.omega)?;
    enc.f64s(s.pi.as_slice())?;
    enc.f64s(s.sigma_sq.as_slice())?;
    enc.f64(s.sigma_mu_sq)?;
    enc.f64s(&s.sigma_g_sq)?;
    enc.f64(s.sigma_b_sq)
}

fn decode_state<R: std::io::Read>(dec: &mut Decoder<R>) -> Result<MarkovState> {
    let theta = dec.matrix()?;
    let mu = DVector::from_vec(dec.f64s()?);
    let lambda = dec.matrix()?;
    let psi = dec.matrix()?;
    let xi = dec.matrix()?;
    let tau = DVector::from_vec(dec.f64s()?);
    let nu = dec.f64()?;
    let a = DVector::from_vec(dec.f64s()?);
    let f = dec.matrix()?;
    let n_levels = dec.usize()?;
    let g = (0..n_levels)
        .map(|_| dec.matrix())
        .collect::<Result<Vec<_>>>()?;
    Ok(MarkovState {
        theta,
        mu,
        lambda,
        psi,
        xi,
        tau,
        nu,
        a,
        f,
        g,
        b: dec.matrix()?,
        omega: dec.bool_matrix()?,
        pi: DVector::from_vec(dec.f64s()?),
        sigma_sq: DVector::from_vec(dec.f64s()?),
        sigma_mu_sq: dec.f64()?,
        sigma_g_sq: dec.f64s()?,
        sigma_b_sq: dec.f64()?,
    })
}

/// Serializes a state on its own; used by the round-trip tests and by [`write`].
pub fn state_bytes(state: &MarkovState) -> Result<Vec<u8>> {
    let mut enc = Encoder::new(Vec::new());
    encode_state(state, &mut enc)?;
    Ok(enc.into_inner())
}

pub fn state_from_bytes(bytes: &[u8]) -> Result<MarkovState> {
    let mut dec = Decoder::new(bytes);
    let state = decode_state(&mut dec)?;
    if !dec.at_end() {
        return Err(Error::Checkpoint("trailing bytes after state".into()));
    }
    Ok(state)
}

pub(super) fn write(r: &ChainRunner<'_>, path: &Path) -> Result<()> {
    // Write to a sibling file and rename so an interrupted write never clobbers a good checkpoint.
    let tmp = path.with_extension("partial");
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut enc = Encoder::new(BufWriter::new(file));
        enc.bytes(MAGIC)?;
        enc.u64(VERSION)?;
        enc.str(&config_hash(&r.config))?;
        enc.str(&data_hash(r.model))?;
        enc.u64(r.chain)?;
        enc.usize(r.iteration)?;
        encode_state(&r.state, &mut enc)?;
        enc.u128(r.streams.gibbs.word_pos())?;
        enc.usize(r.streams.hmc.len())?;
        for s in &r.streams.hmc {
            enc.u128(s.word_pos())?;
        }
        enc.f64s(&r.epsilon)?;
        enc.usizes(&r.window_accepts)?;
        enc.usize(r.window_len)?;
        enc.usize(r.sampling_accepts)?;
        enc.usize(r.sampling_proposals)?;
        enc.usize(r.retries)?;
        enc.usize(r.retained)?;
        enc.f64(r.wall_seconds)?;
        r.archive.encode(&mut enc)?;
        let mut w = enc.into_inner();
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(super) fn read<'a>(
    model: &'a Model,
    config: &ModelConfig,
    path: &Path,
) -> Result<ChainRunner<'a>> {
    config.validate()?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file));
    if dec.bytes(8)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let version = dec.u64()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    if dec.str()? != config_hash(config) {
        return Err(Error::Checkpoint(
            "configuration differs from the one that wrote the checkpoint".into(),
        ));
    }
    if dec.str()? != data_hash(model) {
        return Err(Error::Checkpoint(
            "data or dimensions differ from the ones that wrote the checkpoint".into(),
        ));
    }
    let chain = dec.u64()?;
    let iteration = dec.usize()?;
    if iteration > config.iterations {
        return Err(Error::Checkpoint(format!(
            "checkpoint is at iteration {iteration}, beyond the configured {}",
            config.iterations
        )));
    }
    let state = decode_state(&mut dec)?;
    state
        .validate(model)
        .map_err(|e| Error::Checkpoint(format!("stored state is invalid: {e}")))?;
    let gibbs_pos = dec.u128()?;
    let n_hmc = dec.usize()?;
    if n_hmc != model.n_samples() {
        return Err(Error::Checkpoint(
            "stream count does not match the number of samples".into(),
        ));
    }
    let hmc_pos = (0..n_hmc).map(|_| dec.u128()).collect::<Result<Vec<_>>>()?;
    let streams = SweepStreams {
        gibbs: RngStream::restore(config.seed, chain, 0, gibbs_pos),
        hmc: hmc_pos
            .iter()
            .enumerate()
            .map(|(i, &p)| RngStream::restore(config.seed, chain, 1 + i as u64, p))
            .collect(),
    };
    let mut runner = ChainRunner::new(model, config, chain)?;
    runner.state = state;
    runner.streams = streams;
    runner.iteration = iteration;
    runner.epsilon = dec.f64s()?;
    runner.window_accepts = dec.usizes()?;
    if runner.epsilon.len() != n_hmc || runner.window_accepts.len() != n_hmc {
        return Err(Error::Checkpoint(
            "step-size vector has the wrong length".into(),
        ));
    }
    runner.window_len = dec.usize()?;
    runner.sampling_accepts = dec.usize()?;
    runner.sampling_proposals = dec.usize()?;
    runner.retries = dec.usize()?;
    runner.retained = dec.usize()?;
    runner.wall_seconds = dec.f64()?;
    runner.archive.decode_into(&mut dec)?;
    if runner.archive.n_draws() != runner.retained {
        return Err(Error::Checkpoint(
            "archive length disagrees with the retained count".into(),
        ));
    }
    if !dec.at_end() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    runner.predictive = predictive_indices(config.retained_draws(), config.ppc_draws);
    runner.checkpoint_path = Some(path.to_path_buf());
    Ok(runner)
}
