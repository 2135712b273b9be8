use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mimix::config::CONFIG_KEYS;

fn mimix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimix"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mimix(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const FIT_KEYS: &[&str] = &["iterations=100", "burn_in=50", "hmc_steps=5", "seed=3"];

/// Simulates a small data set and returns its directory.
fn simulate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec![
        "simulate",
        "--out",
        p(&out),
        "n_taxa=15",
        "n_samples=8",
        "n_blocks=2",
        "seed=4",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn fit(sim: &Path, out: &Path, extra: &[&str]) -> Output {
    let counts = sim.join("counts.txt");
    let design = sim.join("design.txt");
    let config = sim.join("config.txt");
    let mut args = vec![
        "fit",
        "--counts",
        p(&counts),
        "--design",
        p(&design),
        "--config",
        p(&config),
        "--out",
        p(out),
    ];
    args.extend_from_slice(FIT_KEYS);
    args.extend_from_slice(extra);
    mimix(&args)
}

fn reports(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir.join("reports"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn help_lists_every_config_key() {
    for args in [vec!["--help"], vec!["fit", "--help"]] {
        let out = Command::new(env!("CARGO_BIN_EXE_mimix"))
            .args(&args)
            .output()
            .unwrap();
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout);
        for (key, _) in CONFIG_KEYS {
            assert!(text.contains(key), "{args:?} help lacks `{key}`");
        }
    }
}

#[test]
fn fit_writes_a_complete_run_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", &[]);
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    assert!(fit(&sim, &first, &[]).status.success());
    assert!(fit(&sim, &second, &["--checkpoint-every", "30"])
        .status
        .success());
    for f in [
        "manifest.txt",
        "config.txt",
        "archive/manifest.txt",
        "archive/beta.bin",
        "reports/global_tests.json",
        "reports/local_tests.csv",
        "reports/eta.csv",
        "reports/correlation.csv",
        "reports/dendrogram.csv",
        "reports/posterior_summary.csv",
        "logs/run.log",
    ] {
        assert!(first.join(f).is_file(), "missing {f}");
    }
    assert!(!second.join("checkpoints").exists());
    assert_eq!(reports(&first), reports(&second));

    let summary = tmp.path().join("summary");
    ok(&["summarize", "--run", p(&first), "--out", p(&summary)]);
    assert_eq!(reports(&first), reports(&summary));

    let ppc = tmp.path().join("ppc");
    ok(&["ppc", "--run", p(&first), "--out", p(&ppc)]);
    let text = fs::read_to_string(ppc.join("reports/ppc.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 8 * 3);
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", &[]);
    let out = mimix(&["simulate", "--out", p(&sim), "seed=5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    ok(&[
        "simulate",
        "--out",
        p(&sim),
        "--force",
        "n_taxa=10",
        "n_samples=4",
        "n_blocks=2",
    ]);
    let counts = fs::read_to_string(sim.join("counts.txt")).unwrap();
    assert_eq!(counts.lines().count(), 5);
}

#[test]
fn input_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", &[]);
    let missing = tmp.path().join("nowhere.txt");
    let out = mimix(&[
        "fit",
        "--counts",
        p(&sim.join("counts.txt")),
        "--design",
        p(&missing),
        "--out",
        p(&tmp.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.txt"));
    assert!(!tmp.path().join("run").exists());

    let out = fit(&sim, &tmp.path().join("run"), &["hmc_steps=0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fit(&sim, &tmp.path().join("run"), &["no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mimix(&[
        "simulate",
        "--out",
        p(&tmp.path().join("bad")),
        "n_samples=7",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = mimix(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn permanova_detects_a_planted_effect() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("strong");
    ok(&[
        "simulate",
        "--out",
        p(&sim),
        "density=10",
        "error_var=0.05",
        "block_var=0.05",
        "seed=2",
    ]);
    let out_dir = tmp.path().join("perm");
    let out = ok(&[
        "permanova",
        "--counts",
        p(&sim.join("counts.txt")),
        "--design",
        p(&sim.join("design.txt")),
        "--config",
        p(&sim.join("config.txt")),
        "--out",
        p(&out_dir),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let pval: f64 = stdout
        .trim()
        .strip_prefix("p_value = ")
        .unwrap()
        .parse()
        .unwrap();
    assert!(pval <= 0.005, "p = {pval}");
    let csv = fs::read_to_string(out_dir.join("reports/permanova.csv")).unwrap();
    assert!(csv.contains("treatment,block,"));
}

#[test]
fn study_smoke_grid_gives_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = tmp.path().join("grid.txt");
    fs::write(
        &grid,
        "density = 0\nblock_var = 1\nerror_var = 1\nreplications = 1\nn_taxa = 12\n\
         n_samples = 8\nn_blocks = 2\niterations = 70\nburn_in = 30\nhmc_steps = 5\n",
    )
    .unwrap();
    let out = tmp.path().join("study");
    ok(&["study", "--grid", p(&grid), "--out", p(&out), "--jobs", "1"]);
    let summary = fs::read_to_string(out.join("reports/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    let results = fs::read_to_string(out.join("reports/results.csv")).unwrap();
    assert!(results.starts_with("density,block_var,error_var,method,metric,value,replicate"));
}

#[test]
fn cv_writes_fold_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", &[]);
    let out = tmp.path().join("cv");
    ok(&[
        "cv",
        "--counts",
        p(&sim.join("counts.txt")),
        "--design",
        p(&sim.join("design.txt")),
        "--config",
        p(&sim.join("config.txt")),
        "--out",
        p(&out),
        "--folds",
        "2",
        "iterations=60",
        "burn_in=20",
        "hmc_steps=5",
    ]);
    let scores = fs::read_to_string(out.join("reports/cv.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 2 * 8);
    let summary = fs::read_to_string(out.join("reports/cv_summary.csv")).unwrap();
    assert!(summary.starts_with("folds,fraction_positive,ties\n2,"));
}
