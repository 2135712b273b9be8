//! `mimix` command-line frontend.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use mimix::analysis::GLOBAL_THRESHOLD;
use mimix::config::CONFIG_KEYS;
use mimix::simulate::{GRID_KEYS, SCENARIO_KEYS};

use output::CliError;

fn key_table(title: &str, keys: &[(&str, &str)]) -> String {
    let width = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = format!("{title}:\n");
    for (k, d) in keys {
        s.push_str(&format!("  {k:<width$}  {d}\n"));
    }
    s
}

fn config_help() -> String {
    key_table(
        "Configuration keys (in a --config file or as key=value overrides)",
        CONFIG_KEYS,
    )
}

fn top_help() -> String {
    format!(
        "{}\n{}\n{}\nExit codes: 0 success, 2 invalid input or configuration, 3 runtime failure.",
        config_help(),
        key_table("Scenario keys for `simulate` (plus seed)", SCENARIO_KEYS),
        key_table(
            "Grid keys for `study` (plus scenario and configuration keys)",
            GRID_KEYS
        )
    )
}

#[derive(Parser)]
#[command(
    name = "mimix",
    version,
    about = "Mixed-effects logistic-normal multinomial models for designed microbiome experiments",
    after_help = top_help()
)]
struct Cli {
    /// More log output on standard error (repeatable).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Only errors on standard error.
    #[arg(short, long, global = true)]
    quiet: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutputArgs {
    /// Run directory to create.
    #[arg(short, long)]
    out: PathBuf,
    /// Replace an existing non-empty run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Count table: header of taxon ids, one row per sample.
    #[arg(long)]
    counts: PathBuf,
    /// Design file: header row, sample ids in the first column.
    #[arg(long)]
    design: PathBuf,
    /// Configuration file of key = value lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic designed experiment with known effects.
    #[command(after_help = key_table("Scenario keys (plus seed)", SCENARIO_KEYS))]
    Simulate {
        #[command(flatten)]
        output: OutputArgs,
        /// Scenario overrides, key=value.
        overrides: Vec<String>,
    },
    /// Fit the model and write the archive and reports.
    #[command(after_help = config_help())]
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Posterior probability needed to reject the global null.
        #[arg(long, default_value_t = GLOBAL_THRESHOLD)]
        threshold: f64,
        /// Write a checkpoint every N iterations.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Continue from the checkpoints of an interrupted run into the same output.
        #[arg(long)]
        resume: bool,
        /// Configuration overrides, key=value.
        overrides: Vec<String>,
    },
    /// Regenerate the reports of a fitted run without refitting.
    Summarize {
        /// Directory written by `fit`.
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, default_value_t = GLOBAL_THRESHOLD)]
        threshold: f64,
    },
    /// Posterior predictive checks of a fitted run.
    Ppc {
        /// Directory written by `fit`.
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
        /// Seed for the replicate draws (default: the run's seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cross-validate the factor model against the no-factors variant.
    #[command(after_help = config_help())]
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Configuration overrides, key=value.
        overrides: Vec<String>,
    },
    /// Permutation test of one covariate on Bray-Curtis dissimilarities.
    Permanova {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Covariate to test (default: the first).
        #[arg(long)]
        covariate: Option<String>,
        /// Factor whose blocks restrict the permutations (default: the innermost factor).
        #[arg(long, conflicts_with = "no_strata")]
        strata: Option<String>,
        /// Permute across all samples.
        #[arg(long)]
        no_strata: bool,
        #[arg(long, default_value_t = 999)]
        permutations: usize,
        /// Configuration overrides, key=value (seed, input.delimiter, design.*).
        overrides: Vec<String>,
    },
    /// Run the factorial simulation benchmark.
    #[command(after_help = key_table("Grid keys (plus scenario and configuration keys)", GRID_KEYS))]
    Study {
        /// Grid file of key = value lines; list values are comma separated.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
        /// Grid overrides, key=value.
        overrides: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Input("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    let verbosity = if cli.quiet { 0 } else { 1 + cli.verbose };
    match cli.command {
        Command::Simulate { output, overrides } => {
            commands::simulate(&output.out, output.force, &overrides, verbosity)
        }
        Command::Fit {
            data,
            output,
            threshold,
            checkpoint_every,
            resume,
            overrides,
        } => commands::fit(
            commands::FitArgs {
                counts: data.counts,
                design: data.design,
                config: data.config,
                out: output.out,
                force: output.force,
                threshold,
                checkpoint_every,
                resume,
                overrides,
            },
            verbosity,
        ),
        Command::Summarize {
            run,
            output,
            threshold,
        } => commands::summarize(&run, &output.out, output.force, threshold, verbosity),
        Command::Ppc { run, output, seed } => {
            commands::ppc(&run, &output.out, output.force, seed, verbosity)
        }
        Command::Cv {
            data,
            output,
            folds,
            overrides,
        } => commands::cv(
            commands::CvArgs {
                counts: data.counts,
                design: data.design,
                config: data.config,
                out: output.out,
                force: output.force,
                folds,
                overrides,
            },
            verbosity,
        ),
        Command::Permanova {
            data,
            output,
            covariate,
            strata,
            no_strata,
            permutations,
            overrides,
        } => commands::permanova_cmd(
            commands::PermanovaArgs {
                counts: data.counts,
                design: data.design,
                config: data.config,
                out: output.out,
                force: output.force,
                covariate,
                strata,
                no_strata,
                permutations,
                overrides,
            },
            verbosity,
        ),
        Command::Study {
            grid,
            output,
            overrides,
        } => commands::study(
            commands::StudyArgs {
                grid,
                out: output.out,
                force: output.force,
                overrides,
            },
            verbosity,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
