//! Run directories that appear only once complete, and the run log.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, inputs or configuration: exit 2.
    Input(String),
    /// The computation itself failed: exit 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<mimix::Error> for CliError {
    fn from(e: mimix::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn write_file(path: &Path, text: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// An output directory built under a hidden sibling and renamed into place on commit.
pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    pub log: RunLog,
}

fn is_nonempty_dir(path: &Path) -> bool {
    fs::read_dir(path)
        .map(|mut d| d.next().is_some())
        .unwrap_or(true)
}

impl RunDir {
    /// Fails when `target` exists and is not empty unless `force` is set. A leftover staging
    /// directory is cleared unless `keep_staging` asks to reuse it.
    pub fn create(
        target: &Path,
        force: bool,
        keep_staging: bool,
        verbosity: u8,
    ) -> CliResult<Self> {
        if target.exists() && is_nonempty_dir(target) && !force {
            return Err(CliError::Input(format!(
                "output directory {} exists and is not empty; pass --force to replace it",
                target.display()
            )));
        }
        let staging = staging_path(target);
        if staging.exists() && !keep_staging {
            fs::remove_dir_all(&staging).map_err(|e| io_error(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| io_error(&staging, e))?;
        Ok(RunDir {
            target: target.to_path_buf(),
            staging,
            log: RunLog::new(verbosity),
        })
    }

    /// Where files are written before the commit.
    pub fn path(&self, relative: &str) -> PathBuf {
        self.staging.join(relative)
    }

    pub fn write(&self, relative: &str, text: impl AsRef<[u8]>) -> CliResult<()> {
        write_file(&self.path(relative), text)
    }

    /// Writes the log and moves the finished directory into place.
    pub fn commit(mut self) -> CliResult<()> {
        self.log
            .info(&format!("output written to {}", self.target.display()));
        write_file(&self.staging.join("logs/run.log"), self.log.text())?;
        if self.target.exists() {
            if self.target.is_dir() {
                fs::remove_dir_all(&self.target).map_err(|e| io_error(&self.target, e))?;
            } else {
                fs::remove_file(&self.target).map_err(|e| io_error(&self.target, e))?;
            }
        }
        fs::rename(&self.staging, &self.target).map_err(|e| io_error(&self.target, e))
    }

    /// Keeps the log of a failed run inside the staging directory.
    pub fn abandon(self) -> PathBuf {
        let _ = write_file(&self.staging.join("logs/run.log"), self.log.text());
        self.staging
    }
}

pub fn staging_path(target: &Path) -> PathBuf {
    let name = target
        .file_name()
        .map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned());
    target.with_file_name(format!(".{name}.partial"))
}

/// Log lines kept for `logs/run.log` and echoed to standard error by verbosity.
pub struct RunLog {
    lines: Vec<String>,
    verbosity: u8,
}

impl RunLog {
    pub fn new(verbosity: u8) -> Self {
        RunLog {
            lines: Vec::new(),
            verbosity,
        }
    }

    fn push(&mut self, level: &str, min_verbosity: u8, message: &str) {
        let line = format!("[{level}] {message}");
        if self.verbosity >= min_verbosity {
            eprintln!("{line}");
        }
        self.lines.push(line);
    }

    pub fn info(&mut self, message: &str) {
        self.push("info", 1, message);
    }

    pub fn warn(&mut self, message: &str) {
        self.push("warn", 1, message);
    }

    pub fn debug(&mut self, message: &str) {
        self.push("debug", 2, message);
    }

    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}
