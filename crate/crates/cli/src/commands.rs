//! One function per subcommand. Each builds its run directory and commits it on success.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mimix::analysis::{
    cross_validate, posterior_predictive_checks, AnalysisReport, PpcReport, Statistic,
};
use mimix::data::{load_count_table, load_design};
use mimix::engine::{ChainRunner, PosteriorArchive};
use mimix::rand_dist::{derive_seed, RngStream};
use mimix::simulate::{
    bray_curtis, generate_dataset, permanova, run_study, SimScenario, StudyGrid,
};
use mimix::{CountTable, ExperimentDesign, Model, ModelConfig, RunConfig, Variant};
use rayon::prelude::*;

use crate::output::{io_error, staging_path, CliError, CliResult, RunDir};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Splits `key=value` overrides.
fn split_overrides(overrides: &[String]) -> CliResult<Vec<(String, String)>> {
    overrides
        .iter()
        .map(|o| {
            o.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| {
                    CliError::Input(format!("override `{o}` is not of the form key=value"))
                })
        })
        .collect()
}

fn load_run_config(config: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for (k, v) in split_overrides(overrides)? {
        cfg.set(&k, &v)
            .map_err(|e| CliError::Input(format!("override `{k}={v}`: {e}")))?;
    }
    cfg.model.validate()?;
    Ok(cfg)
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "{what} file {} not found",
            path.display()
        )))
    }
}

fn load_inputs(
    cfg: &RunConfig,
    counts: &Path,
    design: &Path,
) -> CliResult<(CountTable, ExperimentDesign)> {
    require_file(counts, "count table")?;
    require_file(design, "design")?;
    let table = load_count_table(counts, cfg.delimiter)?;
    let design = load_design(design, cfg.delimiter, &cfg.design, table.n_samples())?;
    Ok((table, design))
}

fn manifest(command: &str, lines: &[(&str, String)]) -> String {
    let mut s = format!("command = {command}\nversion = {VERSION}\n");
    for (k, v) in lines {
        writeln!(s, "{k} = {v}").expect("string write");
    }
    s
}

pub struct FitArgs {
    pub counts: PathBuf,
    pub design: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub force: bool,
    pub threshold: f64,
    pub checkpoint_every: Option<usize>,
    pub resume: bool,
    pub overrides: Vec<String>,
}

fn run_chain_checkpointed(
    model: &Model,
    config: &ModelConfig,
    chain: u64,
    every: Option<usize>,
    checkpoint: &Path,
    resume: bool,
) -> mimix::Result<PosteriorArchive> {
    let mut runner = if resume && checkpoint.is_file() {
        ChainRunner::restore(model, config, checkpoint)?
    } else {
        ChainRunner::new(model, config, chain)?
    };
    if let Some(every) = every {
        runner.set_checkpoint_path(checkpoint);
        while !runner.is_finished() {
            let next = (runner.iteration() / every + 1) * every;
            runner.run_until(next)?;
            runner.checkpoint(checkpoint)?;
        }
    }
    runner.finish()
}

pub fn fit(args: FitArgs, verbosity: u8) -> CliResult<()> {
    let cfg = load_run_config(args.config.as_deref(), &args.overrides)?;
    let (table, design) = load_inputs(&cfg, &args.counts, &args.design)?;
    let model = Model::new(&table, &design, &cfg.model)?;
    let mut run = RunDir::create(&args.out, args.force, args.resume, verbosity)?;
    run.log.info(&format!(
        "fitting {} samples x {} taxa, {} covariates, variant {}, {} chain(s) of {} iterations",
        model.n_samples(),
        model.n_taxa(),
        model.n_covariates(),
        cfg.model.variant.as_str(),
        cfg.model.n_chains,
        cfg.model.iterations
    ));
    if args.resume {
        if staging_path(&args.out).join("checkpoints").is_dir() {
            run.log.info("resuming from checkpoints where present");
        } else {
            run.log.warn("no checkpoints found; starting from scratch");
        }
    }

    let checkpoints: Vec<PathBuf> = (0..cfg.model.n_chains)
        .map(|c| run.path(&format!("checkpoints/chain-{c}.ckpt")))
        .collect();
    if args.checkpoint_every.is_some() {
        let dir = run.path("checkpoints");
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    }
    let results: Vec<mimix::Result<PosteriorArchive>> = (0..cfg.model.n_chains)
        .into_par_iter()
        .map(|c| {
            run_chain_checkpointed(
                &model,
                &cfg.model,
                c as u64,
                args.checkpoint_every,
                &checkpoints[c],
                args.resume,
            )
        })
        .collect();
    let mut archives = Vec::new();
    for (c, r) in results.into_iter().enumerate() {
        match r {
            Ok(a) => archives.push(a),
            Err(e) => run.log.warn(&format!("chain {c} failed: {e}")),
        }
    }
    if archives.is_empty() {
        let staging = run.abandon();
        return Err(CliError::Runtime(format!(
            "every chain failed; partial output kept in {}",
            staging.display()
        )));
    }
    let archive = PosteriorArchive::combine(&archives)?;
    for m in &archive.manifests {
        run.log.debug(&format!(
            "chain {}: acceptance {:.3}, {:.1}s",
            m.chain, m.acceptance_rate, m.wall_seconds
        ));
        for w in &m.warnings {
            run.log.warn(&format!("chain {}: {w}", m.chain));
        }
    }
    let checkpoint_dir = run.path("checkpoints");
    if checkpoint_dir.exists() {
        fs::remove_dir_all(&checkpoint_dir).map_err(|e| io_error(&checkpoint_dir, e))?;
    }

    archive.save(&run.path("archive"))?;
    fs::create_dir_all(run.path("inputs")).map_err(|e| io_error(&run.path("inputs"), e))?;
    for (src, name) in [
        (&args.counts, "inputs/counts.txt"),
        (&args.design, "inputs/design.txt"),
    ] {
        fs::copy(src, run.path(name)).map_err(|e| io_error(src, e))?;
    }
    run.write("config.txt", cfg.to_kv_string())?;
    write_reports(&run, &archive, &table, &design, args.threshold)?;
    run.write(
        "manifest.txt",
        manifest(
            "fit",
            &[
                ("counts", args.counts.display().to_string()),
                ("design", args.design.display().to_string()),
                ("threshold", args.threshold.to_string()),
                ("chains_ok", archives.len().to_string()),
                (
                    "chains_failed",
                    (cfg.model.n_chains - archives.len()).to_string(),
                ),
                ("retained_draws", archive.n_draws().to_string()),
            ],
        ),
    )?;
    let summary = archive_summary(&archive, &design, args.threshold)?;
    run.log.info(&summary);
    println!("{summary}");
    run.commit()
}

fn archive_summary(
    archive: &PosteriorArchive,
    design: &ExperimentDesign,
    threshold: f64,
) -> CliResult<String> {
    let mut s = String::new();
    for (j, name) in design.covariate_names().iter().enumerate() {
        let g = mimix::analysis::global_test(archive, j, threshold)?;
        write!(
            s,
            "{}global test {name}: probability {:.3}, {}",
            if j > 0 { "\n" } else { "" },
            g.probability,
            if g.reject { "reject" } else { "no evidence" }
        )
        .expect("string write");
    }
    Ok(s)
}

fn write_reports(
    run: &RunDir,
    archive: &PosteriorArchive,
    table: &CountTable,
    design: &ExperimentDesign,
    threshold: f64,
) -> CliResult<()> {
    let report = AnalysisReport::from_archive(
        archive,
        threshold,
        Some(table.taxon_ids()),
        Some(design.covariate_names()),
    )?;
    report.write(&run.path("reports"))?;
    run.write("reports/posterior_summary.csv", archive.summary_csv())
}

/// A finished `fit` directory: its archive, resolved configuration and copied inputs.
struct FittedRun {
    archive: PosteriorArchive,
    config: RunConfig,
    table: CountTable,
    design: ExperimentDesign,
}

fn open_run(dir: &Path) -> CliResult<FittedRun> {
    let config_path = dir.join("config.txt");
    require_file(&config_path, "run configuration")?;
    let config = RunConfig::load(&config_path)?;
    let (table, design) = load_inputs(
        &config,
        &dir.join("inputs/counts.txt"),
        &dir.join("inputs/design.txt"),
    )?;
    let archive = PosteriorArchive::load(&dir.join("archive"))?;
    Ok(FittedRun {
        archive,
        config,
        table,
        design,
    })
}

pub fn summarize(
    run_dir: &Path,
    out: &Path,
    force: bool,
    threshold: f64,
    verbosity: u8,
) -> CliResult<()> {
    let fitted = open_run(run_dir)?;
    let mut run = RunDir::create(out, force, false, verbosity)?;
    run.log.info(&format!(
        "summarizing {} retained draws from {}",
        fitted.archive.n_draws(),
        run_dir.display()
    ));
    write_reports(
        &run,
        &fitted.archive,
        &fitted.table,
        &fitted.design,
        threshold,
    )?;
    run.write(
        "manifest.txt",
        manifest(
            "summarize",
            &[
                ("run", run_dir.display().to_string()),
                ("threshold", threshold.to_string()),
            ],
        ),
    )?;
    let summary = archive_summary(&fitted.archive, &fitted.design, threshold)?;
    println!("{summary}");
    run.commit()
}

pub fn ppc(
    run_dir: &Path,
    out: &Path,
    force: bool,
    seed: Option<u64>,
    verbosity: u8,
) -> CliResult<()> {
    let fitted = open_run(run_dir)?;
    let seed = seed.unwrap_or(fitted.config.model.seed);
    let mut run = RunDir::create(out, force, false, verbosity)?;
    let model = Model::new(&fitted.table, &fitted.design, &fitted.config.model)?;
    let report = posterior_predictive_checks(&fitted.archive, model.counts(), seed)?;
    run.log.info(&format!(
        "posterior predictive checks over {} draws",
        report.n_draws
    ));
    run.write(
        "reports/ppc.csv",
        report.to_csv(Some(fitted.table.sample_ids())),
    )?;
    let summary = ppc_summary(&report);
    run.write("reports/ppc_summary.csv", &summary)?;
    run.write(
        "manifest.txt",
        manifest(
            "ppc",
            &[
                ("run", run_dir.display().to_string()),
                ("seed", seed.to_string()),
                ("draws", report.n_draws.to_string()),
            ],
        ),
    )?;
    print!("{summary}");
    run.commit()
}

fn ppc_summary(report: &PpcReport) -> String {
    let mut s = String::from("statistic,flagged_fraction\n");
    for st in Statistic::ALL {
        writeln!(s, "{},{}", st.name(), report.flagged_fraction(st)).expect("string write");
    }
    s
}

pub struct CvArgs {
    pub counts: PathBuf,
    pub design: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub force: bool,
    pub folds: usize,
    pub overrides: Vec<String>,
}

pub fn cv(args: CvArgs, verbosity: u8) -> CliResult<()> {
    let cfg = load_run_config(args.config.as_deref(), &args.overrides)?;
    let (table, design) = load_inputs(&cfg, &args.counts, &args.design)?;
    let with = ModelConfig {
        variant: Variant::Factors,
        ..cfg.model.clone()
    };
    let without = ModelConfig {
        variant: Variant::NoFactors,
        ..cfg.model.clone()
    };
    let template = Model::new(&table, &design, &with)?;
    let mut run = RunDir::create(&args.out, args.force, false, verbosity)?;
    run.log.info(&format!(
        "{}-fold cross-validation of factors against no-factors",
        args.folds
    ));
    let summary = cross_validate(&template, &with, &without, args.folds, cfg.model.seed)?;
    run.write("reports/cv.csv", summary.to_csv(Some(table.sample_ids())))?;
    let text = format!(
        "folds,fraction_positive,ties\n{},{},{}\n",
        args.folds, summary.fraction_positive, summary.ties
    );
    run.write("reports/cv_summary.csv", &text)?;
    run.write("config.txt", cfg.to_kv_string())?;
    run.write(
        "manifest.txt",
        manifest(
            "cv",
            &[
                ("counts", args.counts.display().to_string()),
                ("design", args.design.display().to_string()),
                ("folds", args.folds.to_string()),
            ],
        ),
    )?;
    println!(
        "fraction of held-out differences favouring factors: {:.3}",
        summary.fraction_positive
    );
    run.commit()
}

pub struct PermanovaArgs {
    pub counts: PathBuf,
    pub design: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub force: bool,
    pub covariate: Option<String>,
    pub strata: Option<String>,
    pub no_strata: bool,
    pub permutations: usize,
    pub overrides: Vec<String>,
}

pub fn permanova_cmd(args: PermanovaArgs, verbosity: u8) -> CliResult<()> {
    let cfg = load_run_config(args.config.as_deref(), &args.overrides)?;
    let (table, design) = load_inputs(&cfg, &args.counts, &args.design)?;
    let names = design.covariate_names();
    let j = match &args.covariate {
        Some(c) => names
            .iter()
            .position(|n| n == c)
            .ok_or_else(|| CliError::Input(format!("design has no covariate `{c}`")))?,
        None => 0,
    };
    let strata = if args.no_strata {
        None
    } else {
        match &args.strata {
            Some(s) => Some(
                design
                    .factors()
                    .iter()
                    .find(|f| &f.name == s)
                    .ok_or_else(|| CliError::Input(format!("design has no factor `{s}`")))?,
            ),
            None => design.factors().last(),
        }
    };
    let mut run = RunDir::create(&args.out, args.force, false, verbosity)?;
    let x: Vec<f64> = design.covariates().column(j).iter().copied().collect();
    let mut rng = RngStream::new(derive_seed(cfg.model.seed, &[0x9e]), 0, 0);
    let result = permanova(
        &bray_curtis(&table),
        &x,
        strata.map(|f| f.assignment.as_slice()),
        args.permutations,
        &mut rng,
    )?;
    let strata_name = strata.map_or("none", |f| f.name.as_str());
    run.log.info(&format!(
        "PERMANOVA on `{}` within `{strata_name}`: F = {}, p = {}",
        names[j], result.f_statistic, result.p_value
    ));
    run.write(
        "reports/permanova.csv",
        format!(
            "covariate,strata,f_statistic,p_value,permutations\n{},{strata_name},{},{},{}\n",
            names[j], result.f_statistic, result.p_value, result.n_perm
        ),
    )?;
    run.write(
        "manifest.txt",
        manifest(
            "permanova",
            &[
                ("counts", args.counts.display().to_string()),
                ("design", args.design.display().to_string()),
                ("seed", cfg.model.seed.to_string()),
            ],
        ),
    )?;
    println!("p_value = {}", result.p_value);
    run.commit()
}

pub fn simulate(out: &Path, force: bool, overrides: &[String], verbosity: u8) -> CliResult<()> {
    let mut scenario = SimScenario::default();
    let mut seed = 1u64;
    for (k, v) in split_overrides(overrides)? {
        if k == "seed" {
            seed = v
                .parse()
                .map_err(|_| CliError::Input(format!("invalid seed `{v}`")))?;
        } else {
            scenario
                .set(&k, &v)
                .map_err(|e| CliError::Input(format!("override `{k}={v}`: {e}")))?;
        }
    }
    scenario.validate()?;
    let mut rng = RngStream::new(derive_seed(seed, &[0x51]), 0, 0);
    let (table, design, truth) = generate_dataset(&scenario, &mut rng)?;
    let mut run = RunDir::create(out, force, false, verbosity)?;
    run.log.info(&format!(
        "simulated {} samples x {} taxa, density {}%, {} effect cluster(s)",
        scenario.n_samples,
        scenario.n_taxa,
        scenario.density,
        truth.clusters.len()
    ));
    table.write(&run.path("counts.txt"))?;
    design.write(&run.path("design.txt"))?;
    let mut truth_csv = String::from("taxon,beta,mu\n");
    for (k, id) in table.taxon_ids().iter().enumerate() {
        writeln!(truth_csv, "{id},{},{}", truth.beta[k], truth.mu[k]).expect("string write");
    }
    run.write("truth.csv", truth_csv)?;
    let fit_config = RunConfig {
        design: mimix::DesignSpec {
            covariates: design.covariate_names().to_vec(),
            interactions: Vec::new(),
            factors: design.factors().iter().map(|f| f.name.clone()).collect(),
        },
        ..RunConfig::default()
    };
    run.write("config.txt", fit_config.to_kv_string())?;
    let mut lines = vec![("seed", seed.to_string())];
    let values = [
        ("n_taxa", scenario.n_taxa.to_string()),
        ("n_samples", scenario.n_samples.to_string()),
        ("n_blocks", scenario.n_blocks.to_string()),
        ("density", scenario.density.to_string()),
        ("block_var", scenario.block_var.to_string()),
        ("error_var", scenario.error_var.to_string()),
        ("rho_block", scenario.rho_block.to_string()),
        ("rho_error", scenario.rho_error.to_string()),
        ("min_total", scenario.min_total.to_string()),
        ("max_total", scenario.max_total.to_string()),
    ];
    lines.extend(values);
    run.write("manifest.txt", manifest("simulate", &lines))?;
    run.commit()
}

pub struct StudyArgs {
    pub grid: Option<PathBuf>,
    pub out: PathBuf,
    pub force: bool,
    pub overrides: Vec<String>,
}

pub fn study(args: StudyArgs, verbosity: u8) -> CliResult<()> {
    let mut grid = match &args.grid {
        Some(p) => {
            require_file(p, "grid")?;
            StudyGrid::load(p)?
        }
        None => StudyGrid::default(),
    };
    for (k, v) in split_overrides(&args.overrides)? {
        grid.set(&k, &v)
            .map_err(|e| CliError::Input(format!("override `{k}={v}`: {e}")))?;
    }
    grid.validate()?;
    let mut run = RunDir::create(&args.out, args.force, false, verbosity)?;
    let cells = grid.cells().len();
    run.log.info(&format!(
        "{cells} cell(s) x {} replicate(s), methods: {}",
        grid.replications,
        grid.methods
            .iter()
            .map(|m| m.name())
            .collect::<Vec<_>>()
            .join(", ")
    ));
    let results = run_study(&grid, &|done, total| {
        if verbosity >= 1 {
            eprintln!("[info] replicate {done}/{total} finished");
        }
    })?;
    for f in &results.failures {
        run.log.warn(&format!(
            "cell {} replicate {} {}: {}",
            f.cell + 1,
            f.replicate + 1,
            f.method.map_or("data", |m| m.name()),
            f.message
        ));
    }
    run.write("reports/results.csv", results.to_csv())?;
    let summary = results.summary_csv();
    run.write("reports/summary.csv", &summary)?;
    run.write("reports/failures.csv", results.failures_csv())?;
    if let Some(p) = &args.grid {
        fs::copy(p, run.path("grid.txt")).map_err(|e| io_error(p, e))?;
    }
    run.write(
        "manifest.txt",
        manifest(
            "study",
            &[
                ("cells", cells.to_string()),
                ("replications", grid.replications.to_string()),
                ("seed", grid.seed.to_string()),
                ("failures", results.failures.len().to_string()),
            ],
        ),
    )?;
    print!("{summary}");
    run.commit()
}
