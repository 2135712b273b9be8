//! Retained draws, running means and their on-disk layout.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DMatrix;

use super::binio::{Decoder, Encoder};
use crate::config::Variant;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::state::MarkovState;

const MATRIX_MAGIC: &[u8; 8] = b"MIMIXMAT";

/// A row per retained draw, stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Draws {
    cols: usize,
    data: Vec<f64>,
}

impl Draws {
    pub fn new(cols: usize) -> Self {
        Draws {
            cols,
            data: Vec::new(),
        }
    }

    pub fn from_rows(cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 && !data.is_empty() || cols > 0 && data.len() % cols != 0 {
            return Err(Error::Dimension(format!(
                "{} values do not fill rows of width {cols}",
                data.len()
            )));
        }
        Ok(Draws { cols, data })
    }

    pub fn push(&mut self, row: impl IntoIterator<Item = f64>) {
        let before = self.data.len();
        self.data.extend(row);
        debug_assert_eq!(self.data.len() - before, self.cols);
    }

    pub fn rows(&self) -> usize {
        if self.cols == 0 {
            0
        } else {
            self.data.len() / self.cols
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Every draw of column `c`.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows())
            .map(|r| self.data[r * self.cols + c])
            .collect()
    }

    pub fn column_mean(&self, c: usize) -> f64 {
        let rows = self.rows();
        if rows == 0 {
            return f64::NAN;
        }
        (0..rows).map(|r| self.data[r * self.cols + c]).sum::<f64>() / rows as f64
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.cols).map(|c| self.column_mean(c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn append(&mut self, other: &Draws) -> Result<()> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "cannot append {} columns to {}",
                other.cols, self.cols
            )));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub(crate) fn encode<W: std::io::Write>(&self, enc: &mut Encoder<W>) -> Result<()> {
        enc.usize(self.cols)?;
        enc.f64s(&self.data)
    }

    pub(crate) fn decode<R: std::io::Read>(dec: &mut Decoder<R>) -> Result<Self> {
        let cols = dec.usize()?;
        Draws::from_rows(cols, dec.f64s()?).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Writes the flat matrix file: magic, rows, cols, then little-endian values row by row.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = Encoder::new(BufWriter::new(file));
        enc.bytes(MATRIX_MAGIC)?;
        enc.usize(self.rows())?;
        enc.usize(self.cols)?;
        for v in &self.data {
            enc.f64(*v)?;
        }
        let mut w = enc.into_inner();
        std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut dec = Decoder::new(BufReader::new(file));
        let context = |e: Error| Error::Validation(format!("{}: {e}", path.display()));
        if dec.bytes(8).map_err(context)? != MATRIX_MAGIC {
            return Err(Error::Validation(format!(
                "{}: not a draw matrix file",
                path.display()
            )));
        }
        let rows = dec.usize().map_err(context)?;
        let cols = dec.usize().map_err(context)?;
        let data = (0..rows * cols)
            .map(|_| dec.f64())
            .collect::<Result<Vec<_>>>()
            .map_err(context)?;
        if !dec.at_end() {
            return Err(Error::Validation(format!(
                "{}: trailing bytes after matrix",
                path.display()
            )));
        }
        Draws::from_rows(cols, data)
    }
}

fn matrix_to_draws(m: &DMatrix<f64>) -> Draws {
    let mut d = Draws::new(m.ncols());
    for r in 0..m.nrows() {
        d.push(m.row(r).iter().copied());
    }
    d
}

fn draws_to_matrix(d: &Draws, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if d.rows() != rows || d.cols() != cols {
        return Err(Error::Dimension(format!(
            "expected a {rows}x{cols} matrix, found {}x{}",
            d.rows(),
            d.cols()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, d.as_slice()))
}

/// Per-chain run facts written next to the draws.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub seed: u64,
    pub chain: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// HMC acceptance rate over the sampling phase.
    pub acceptance_rate: f64,
    /// Step sizes in force after burn-in (one, or one per sample).
    pub final_epsilon: Vec<f64>,
    pub wall_seconds: f64,
    pub retries: usize,
    pub warnings: Vec<String>,
}

/// One burn-in adaptation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationRecord {
    /// Iteration (1-based) closing the window.
    pub iteration: usize,
    /// Mean acceptance over the window and samples.
    pub acceptance: f64,
    /// Mean step size after the adjustment.
    pub epsilon: f64,
}

/// Ingredients for fresh replicate draws of `theta`: per draw `mu`, the loadings,
/// the factor prior means `b~ x_i + sum_r g_r[z_ir]` and the residual variances.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    pub mu: Draws,
    /// Empty for the no-factors variant.
    pub lambda: Draws,
    pub factor_mean: Draws,
    pub sigma_sq: Draws,
}

/// Thinned draws and running means from one chain, or several combined.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorArchive {
    pub variant: Variant,
    pub n_samples: usize,
    pub n_taxa: usize,
    pub n_factors: usize,
    pub n_covariates: usize,
    pub level_sizes: Vec<usize>,
    /// `beta = Lambda b~`, `K x p` per draw, taxon-major.
    pub beta: Draws,
    pub mu: Draws,
    pub sigma_sq: Draws,
    pub sigma_mu_sq: Draws,
    /// One column per random-effect level.
    pub sigma_g_sq: Draws,
    pub sigma_b_sq: Draws,
    /// Inclusion indicators as 0/1, `L x p` per draw, factor-major.
    pub omega: Draws,
    pub pi: Draws,
    /// Random effects of every level concatenated, each `q_r x L` block-major.
    pub g: Draws,
    /// Full loading draws when requested.
    pub lambda: Option<Draws>,
    pub predictive: PredictiveDraws,
    /// Number of draws behind the running means below.
    pub accumulated: usize,
    pub lambda_mean: DMatrix<f64>,
    /// Mean of the per-draw correlation matrix induced by `Lambda Lambda'`.
    pub correlation_mean: DMatrix<f64>,
    /// Mean of `softmax(theta_i)`.
    pub phi_mean: DMatrix<f64>,
    pub theta_mean: DMatrix<f64>,
    pub adaptation: Vec<AdaptationRecord>,
    pub manifests: Vec<RunManifest>,
}

/// Per-draw correlation matrix `D^-1/2 M D^-1/2` with `M = Lambda Lambda'`; rows with a zero
/// diagonal get a unit diagonal and zero off-diagonals.
pub fn loading_correlation(lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let m = lambda * lambda.transpose();
    let k = m.nrows();
    let d: Vec<f64> = (0..k).map(|i| m[(i, i)]).collect();
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else if d[i] > 0.0 && d[j] > 0.0 {
            m[(i, j)] / (d[i] * d[j]).sqrt()
        } else {
            0.0
        }
    })
}

impl PosteriorArchive {
    pub fn empty(model: &Model, retain_lambda: bool) -> Self {
        let (n, k, l, p) = (
            model.n_samples(),
            model.n_taxa(),
            model.n_factors(),
            model.n_covariates(),
        );
        let level_sizes: Vec<usize> = model.levels().iter().map(|lv| lv.n_blocks()).collect();
        let g_cols = level_sizes.iter().sum::<usize>() * l;
        let factors = model.variant() == Variant::Factors;
        PosteriorArchive {
            variant: model.variant(),
            n_samples: n,
            n_taxa: k,
            n_factors: l,
            n_covariates: p,
            beta: Draws::new(k * p),
            mu: Draws::new(k),
            sigma_sq: Draws::new(k),
            sigma_mu_sq: Draws::new(1),
            sigma_g_sq: Draws::new(level_sizes.len()),
            sigma_b_sq: Draws::new(1),
            omega: Draws::new(l * p),
            pi: Draws::new(p),
            g: Draws::new(g_cols),
            lambda: retain_lambda.then(|| Draws::new(k * l)),
            predictive: PredictiveDraws {
                mu: Draws::new(k),
                lambda: Draws::new(if factors { k * l } else { 0 }),
                factor_mean: Draws::new(n * l),
                sigma_sq: Draws::new(k),
            },
            level_sizes,
            accumulated: 0,
            lambda_mean: DMatrix::zeros(k, l),
            correlation_mean: DMatrix::zeros(k, k),
            phi_mean: DMatrix::zeros(n, k),
            theta_mean: DMatrix::zeros(n, k),
            adaptation: Vec::new(),
            manifests: Vec::new(),
        }
    }

    /// Number of retained draws.
    pub fn n_draws(&self) -> usize {
        self.beta.rows()
    }

    pub fn n_predictive(&self) -> usize {
        self.predictive.mu.rows()
    }

    /// Appends one retained draw; `predictive` also keeps it for replicate simulation.
    pub fn record(&mut self, state: &MarkovState, model: &Model, predictive: bool) {
        let beta = state.beta();
        self.beta.push(
            beta.row_iter()
                .flat_map(|r| r.iter().copied().collect::<Vec<_>>()),
        );
        self.mu.push(state.mu.iter().copied());
        self.sigma_sq.push(state.sigma_sq.iter().copied());
        self.sigma_mu_sq.push([state.sigma_mu_sq]);
        self.sigma_g_sq.push(state.sigma_g_sq.iter().copied());
        self.sigma_b_sq.push([state.sigma_b_sq]);
        self.omega.push(state.omega.row_iter().flat_map(|r| {
            r.iter()
                .map(|w| if *w { 1.0 } else { 0.0 })
                .collect::<Vec<_>>()
        }));
        self.pi.push(state.pi.iter().copied());
        self.g.push(state.g.iter().flat_map(|g| {
            g.row_iter()
                .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
                .collect::<Vec<_>>()
        }));
        let lambda_row_major = || {
            state
                .lambda
                .row_iter()
                .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        if let Some(lambda) = &mut self.lambda {
            lambda.push(lambda_row_major());
        }
        if predictive {
            self.predictive.mu.push(state.mu.iter().copied());
            if self.variant == Variant::Factors {
                self.predictive.lambda.push(lambda_row_major());
            }
            let fm = state.factor_prior_mean(model);
            self.predictive.factor_mean.push(
                fm.row_iter()
                    .flat_map(|r| r.iter().copied().collect::<Vec<_>>()),
            );
            self.predictive
                .sigma_sq
                .push(state.sigma_sq.iter().copied());
        }

        self.accumulated += 1;
        let w = 1.0 / self.accumulated as f64;
        let blend = |acc: &mut DMatrix<f64>, x: &DMatrix<f64>| {
            acc.zip_apply(x, |a, v| *a += (v - *a) * w);
        };
        blend(&mut self.lambda_mean, &state.lambda);
        blend(
            &mut self.correlation_mean,
            &loading_correlation(&state.lambda),
        );
        blend(&mut self.theta_mean, &state.theta);
        let mut phi = state.theta.clone();
        let k = phi.ncols();
        let mut out = vec![0.0; k];
        for i in 0..phi.nrows() {
            let row: Vec<f64> = phi.row(i).iter().copied().collect();
            crate::data::softmax_into(&row, &mut out);
            for j in 0..k {
                phi[(i, j)] = out[j];
            }
        }
        blend(&mut self.phi_mean, &phi);
    }

    /// Posterior-mean `beta` as a `K x p` matrix.
    pub fn beta_mean(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_taxa, self.n_covariates, &self.beta.means())
    }

    /// Draws of `beta_kj`.
    pub fn beta_draws(&self, k: usize, j: usize) -> Vec<f64> {
        self.beta.column(k * self.n_covariates + j)
    }

    /// Inclusion indicator of factor `l` for covariate `j` in retained draw `r`.
    pub fn omega_at(&self, r: usize, l: usize, j: usize) -> bool {
        self.omega.row(r)[l * self.n_covariates + j] != 0.0
    }

    /// Pools chains with identical dimensions. Draws are concatenated in chain order and
    /// running means are weighted by their draw counts.
    pub fn combine(archives: &[PosteriorArchive]) -> Result<Self> {
        let first = archives
            .first()
            .ok_or_else(|| Error::Validation("no archives to combine".into()))?;
        let mut out = first.clone();
        for a in &archives[1..] {
            let same = a.variant == out.variant
                && a.n_samples == out.n_samples
                && a.n_taxa == out.n_taxa
                && a.n_factors == out.n_factors
                && a.n_covariates == out.n_covariates
                && a.level_sizes == out.level_sizes
                && a.lambda.is_some() == out.lambda.is_some();
            if !same {
                return Err(Error::Dimension(
                    "archives come from different models".into(),
                ));
            }
            for (dst, src) in out.blocks_mut().into_iter().zip(a.blocks()) {
                dst.1.append(src.1)?;
            }
            if let (Some(dst), Some(src)) = (&mut out.lambda, &a.lambda) {
                dst.append(src)?;
            }
            let total = out.accumulated + a.accumulated;
            if total > 0 {
                let (wa, wb) = (
                    out.accumulated as f64 / total as f64,
                    a.accumulated as f64 / total as f64,
                );
                let mix = |x: &DMatrix<f64>, y: &DMatrix<f64>| x * wa + y * wb;
                out.lambda_mean = mix(&out.lambda_mean, &a.lambda_mean);
                out.correlation_mean = mix(&out.correlation_mean, &a.correlation_mean);
                out.phi_mean = mix(&out.phi_mean, &a.phi_mean);
                out.theta_mean = mix(&out.theta_mean, &a.theta_mean);
            }
            out.accumulated = total;
            out.adaptation.extend_from_slice(&a.adaptation);
            out.manifests.extend(a.manifests.iter().cloned());
        }
        Ok(out)
    }

    fn blocks(&self) -> Vec<(&'static str, &Draws)> {
        vec![
            ("beta", &self.beta),
            ("mu", &self.mu),
            ("sigma_sq", &self.sigma_sq),
            ("sigma_mu_sq", &self.sigma_mu_sq),
            ("sigma_g_sq", &self.sigma_g_sq),
            ("sigma_b_sq", &self.sigma_b_sq),
            ("omega", &self.omega),
            ("pi", &self.pi),
            ("g", &self.g),
            ("ppc_mu", &self.predictive.mu),
            ("ppc_lambda", &self.predictive.lambda),
            ("ppc_factor_mean", &self.predictive.factor_mean),
            ("ppc_sigma_sq", &self.predictive.sigma_sq),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(&'static str, &mut Draws)> {
        vec![
            ("beta", &mut self.beta),
            ("mu", &mut self.mu),
            ("sigma_sq", &mut self.sigma_sq),
            ("sigma_mu_sq", &mut self.sigma_mu_sq),
            ("sigma_g_sq", &mut self.sigma_g_sq),
            ("sigma_b_sq", &mut self.sigma_b_sq),
            ("omega", &mut self.omega),
            ("pi", &mut self.pi),
            ("g", &mut self.g),
            ("ppc_mu", &mut self.predictive.mu),
            ("ppc_lambda", &mut self.predictive.lambda),
            ("ppc_factor_mean", &mut self.predictive.factor_mean),
            ("ppc_sigma_sq", &mut self.predictive.sigma_sq),
        ]
    }

    fn accumulators(&self) -> Vec<(&'static str, &DMatrix<f64>)> {
        vec![
            ("lambda_mean", &self.lambda_mean),
            ("correlation_mean", &self.correlation_mean),
            ("phi_mean", &self.phi_mean),
            ("theta_mean", &self.theta_mean),
        ]
    }

    pub(crate) fn encode<W: std::io::Write>(&self, enc: &mut Encoder<W>) -> Result<()> {
        for (_, d) in self.blocks() {
            d.encode(enc)?;
        }
        enc.bool(self.lambda.is_some())?;
        if let Some(l) = &self.lambda {
            l.encode(enc)?;
        }
        enc.usize(self.accumulated)?;
        for (_, m) in self.accumulators() {
            enc.matrix(m)?;
        }
        enc.usize(self.adaptation.len())?;
        for a in &self.adaptation {
            enc.usize(a.iteration)?;
            enc.f64(a.acceptance)?;
            enc.f64(a.epsilon)?;
        }
        Ok(())
    }

    /// Reads the part written by [`encode`](Self::encode) into an archive already shaped for the model.
    pub(crate) fn decode_into<R: std::io::Read>(&mut self, dec: &mut Decoder<R>) -> Result<()> {
        for (name, d) in self.blocks_mut() {
            let got = Draws::decode(dec)?;
            if got.cols() != d.cols() {
                return Err(Error::Checkpoint(format!(
                    "draw block {name} has the wrong width"
                )));
            }
            *d = got;
        }
        let has_lambda = dec.bool()?;
        if has_lambda != self.lambda.is_some() {
            return Err(Error::Checkpoint(
                "retain_lambda differs from the checkpoint".into(),
            ));
        }
        if has_lambda {
            self.lambda = Some(Draws::decode(dec)?);
        }
        self.accumulated = dec.usize()?;
        let shapes: Vec<(usize, usize)> =
            self.accumulators().iter().map(|(_, m)| m.shape()).collect();
        let mut mats = Vec::new();
        for shape in shapes {
            let m = dec.matrix()?;
            if m.shape() != shape {
                return Err(Error::Checkpoint("running-mean shape mismatch".into()));
            }
            mats.push(m);
        }
        let mut it = mats.into_iter();
        self.lambda_mean = it.next().expect("four accumulators");
        self.correlation_mean = it.next().expect("four accumulators");
        self.phi_mean = it.next().expect("four accumulators");
        self.theta_mean = it.next().expect("four accumulators");
        let n = dec.usize()?;
        self.adaptation = (0..n)
            .map(|_| {
                Ok(AdaptationRecord {
                    iteration: dec.usize()?,
                    acceptance: dec.f64()?,
                    epsilon: dec.f64()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Writes the archive directory: `manifest.txt`, one `.bin` file per draw block and running
    /// mean, `summary.csv` and `adaptation.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write("manifest.txt", self.manifest_text())?;
        for (name, d) in self.blocks() {
            d.write(&dir.join(format!("{name}.bin")))?;
        }
        if let Some(l) = &self.lambda {
            l.write(&dir.join("lambda.bin"))?;
        }
        for (name, m) in self.accumulators() {
            matrix_to_draws(m).write(&dir.join(format!("{name}.bin")))?;
        }
        write("summary.csv", self.summary_csv())?;
        let mut adapt = String::from("iteration,acceptance,epsilon\n");
        for a in &self.adaptation {
            writeln!(adapt, "{},{},{}", a.iteration, a.acceptance, a.epsilon)
                .expect("string write");
        }
        write("adaptation.csv", adapt)
    }

    fn manifest_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(s, "format = 1").unwrap();
        writeln!(s, "variant = {}", self.variant.as_str()).unwrap();
        writeln!(s, "n_samples = {}", self.n_samples).unwrap();
        writeln!(s, "n_taxa = {}", self.n_taxa).unwrap();
        writeln!(s, "n_factors = {}", self.n_factors).unwrap();
        writeln!(s, "n_covariates = {}", self.n_covariates).unwrap();
        writeln!(s, "level_sizes = {}", list(&self.level_sizes)).unwrap();
        writeln!(s, "retained_draws = {}", self.n_draws()).unwrap();
        writeln!(s, "accumulated = {}", self.accumulated).unwrap();
        writeln!(s, "lambda_draws = {}", self.lambda.is_some()).unwrap();
        writeln!(s, "chains = {}", self.manifests.len()).unwrap();
        for (c, m) in self.manifests.iter().enumerate() {
            let eps = m
                .final_epsilon
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(",");
            writeln!(s, "chain.{c}.id = {}", m.chain).unwrap();
            writeln!(s, "chain.{c}.seed = {}", m.seed).unwrap();
            writeln!(s, "chain.{c}.config_hash = {}", m.config_hash).unwrap();
            writeln!(s, "chain.{c}.data_hash = {}", m.data_hash).unwrap();
            writeln!(s, "chain.{c}.iterations = {}", m.iterations).unwrap();
            writeln!(s, "chain.{c}.burn_in = {}", m.burn_in).unwrap();
            writeln!(s, "chain.{c}.thin = {}", m.thin).unwrap();
            writeln!(s, "chain.{c}.acceptance_rate = {}", m.acceptance_rate).unwrap();
            writeln!(s, "chain.{c}.final_epsilon = {eps}").unwrap();
            writeln!(s, "chain.{c}.wall_seconds = {:.3}", m.wall_seconds).unwrap();
            writeln!(s, "chain.{c}.retries = {}", m.retries).unwrap();
            writeln!(s, "chain.{c}.warnings = {}", m.warnings.join(" | ")).unwrap();
        }
        s
    }

    /// Posterior mean and standard deviation of every scalar block.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("quantity,index,mean,sd\n");
        for (name, d) in self
            .blocks()
            .into_iter()
            .filter(|(n, _)| !n.starts_with("ppc_"))
        {
            for c in 0..d.cols() {
                let col = d.column(c);
                let (mean, sd) = mean_sd(&col);
                writeln!(s, "{name},{c},{mean},{sd}").expect("string write");
            }
        }
        s
    }

    /// Reads an archive directory written by [`save`](Self::save).
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let kv: std::collections::BTreeMap<String, String> =
            crate::config::parse_key_values(&text, &path.display().to_string())?
                .into_iter()
                .map(|(_, k, v)| (k, v))
                .collect();
        let get = |key: &str| {
            kv.get(key).cloned().ok_or_else(|| {
                Error::Validation(format!("{}: missing key `{key}`", path.display()))
            })
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|_| {
                Error::Validation(format!("{}: bad value for `{key}`", path.display()))
            })
        };
        let variant: Variant = get("variant")?.parse()?;
        let (n, k, l, p) = (
            num("n_samples")?,
            num("n_taxa")?,
            num("n_factors")?,
            num("n_covariates")?,
        );
        let level_sizes: Vec<usize> = get("level_sizes")?
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Validation("bad level_sizes".into()))
            })
            .collect::<Result<_>>()?;
        let has_lambda = get("lambda_draws")? == "true";
        let read = |name: &str| Draws::read(&dir.join(format!("{name}.bin")));
        let matrix = |name: &str, r: usize, c: usize| draws_to_matrix(&read(name)?, r, c);
        let mut archive = PosteriorArchive {
            variant,
            n_samples: n,
            n_taxa: k,
            n_factors: l,
            n_covariates: p,
            level_sizes,
            beta: read("beta")?,
            mu: read("mu")?,
            sigma_sq: read("sigma_sq")?,
            sigma_mu_sq: read("sigma_mu_sq")?,
            sigma_g_sq: read("sigma_g_sq")?,
            sigma_b_sq: read("sigma_b_sq")?,
            omega: read("omega")?,
            pi: read("pi")?,
            g: read("g")?,
            lambda: if has_lambda {
                Some(read("lambda")?)
            } else {
                None
            },
            predictive: PredictiveDraws {
                mu: read("ppc_mu")?,
                lambda: read("ppc_lambda")?,
                factor_mean: read("ppc_factor_mean")?,
                sigma_sq: read("ppc_sigma_sq")?,
            },
            accumulated: num("accumulated")?,
            lambda_mean: matrix("lambda_mean", k, l)?,
            correlation_mean: matrix("correlation_mean", k, k)?,
            phi_mean: matrix("phi_mean", n, k)?,
            theta_mean: matrix("theta_mean", n, k)?,
            adaptation: Vec::new(),
            manifests: Vec::new(),
        };
        let widths_ok = archive.beta.cols() == k * p
            && archive.mu.cols() == k
            && archive.omega.cols() == l * p
            && archive.pi.cols() == p
            && archive.sigma_g_sq.cols() == archive.level_sizes.len();
        let rows = archive.beta.rows();
        let rows_ok = [&archive.mu, &archive.sigma_sq, &archive.omega, &archive.pi]
            .iter()
            .all(|d| d.rows() == rows);
        if !widths_ok || !rows_ok {
            return Err(Error::Validation(format!(
                "{}: draw files disagree with the manifest",
                dir.display()
            )));
        }
        let adapt_path = dir.join("adaptation.csv");
        if let Ok(text) = fs::read_to_string(&adapt_path) {
            for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
                let f: Vec<&str> = line.split(',').collect();
                let bad = || {
                    Error::Validation(format!("{}: malformed row `{line}`", adapt_path.display()))
                };
                if f.len() != 3 {
                    return Err(bad());
                }
                archive.adaptation.push(AdaptationRecord {
                    iteration: f[0].parse().map_err(|_| bad())?,
                    acceptance: f[1].parse().map_err(|_| bad())?,
                    epsilon: f[2].parse().map_err(|_| bad())?,
                });
            }
        }
        let chains = num("chains")?;
        for c in 0..chains {
            let key = |f: &str| format!("chain.{c}.{f}");
            let parse_f64 = |f: &str| -> Result<f64> {
                get(&key(f))?
                    .parse()
                    .map_err(|_| Error::Validation(format!("bad value for {}", key(f))))
            };
            let eps = get(&key("final_epsilon"))?;
            let warnings = get(&key("warnings"))?;
            archive.manifests.push(RunManifest {
                seed: get(&key("seed"))?
                    .parse()
                    .map_err(|_| Error::Validation("bad seed".into()))?,
                chain: get(&key("id"))?
                    .parse()
                    .map_err(|_| Error::Validation("bad chain id".into()))?,
                config_hash: get(&key("config_hash"))?,
                data_hash: get(&key("data_hash"))?,
                iterations: num(&key("iterations"))?,
                burn_in: num(&key("burn_in"))?,
                thin: num(&key("thin"))?,
                acceptance_rate: parse_f64("acceptance_rate")?,
                final_epsilon: eps
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| Error::Validation("bad final_epsilon".into()))
                    })
                    .collect::<Result<_>>()?,
                wall_seconds: parse_f64("wall_seconds")?,
                retries: num(&key("retries"))?,
                warnings: if warnings.is_empty() {
                    Vec::new()
                } else {
                    warnings.split(" | ").map(String::from).collect()
                },
            });
        }
        Ok(archive)
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
