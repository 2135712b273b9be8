//! Report tables built from an archive and their CSV/JSON forms.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    factor_correlation, global_test, local_tests, variance_decomposition, CvSummary,
    FactorCorrelation, GlobalTest, LocalTest, PpcReport, VarianceDecomposition,
};
use crate::engine::PosteriorArchive;
use crate::error::{Error, Result};

/// Everything derived from an archive alone.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub threshold: f64,
    pub global: Vec<GlobalTest>,
    pub local: Vec<LocalTest>,
    pub variance: VarianceDecomposition,
    pub correlation: FactorCorrelation,
    pub taxon_names: Vec<String>,
    pub covariate_names: Vec<String>,
}

fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl AnalysisReport {
    /// Builds every archive-level summary. Names default to `taxon1..` and `x1..` when `None`.
    pub fn from_archive(
        archive: &PosteriorArchive,
        threshold: f64,
        taxon_names: Option<&[String]>,
        covariate_names: Option<&[String]>,
    ) -> Result<Self> {
        let taxon_names = taxon_names.map_or_else(
            || default_names("taxon", archive.n_taxa),
            <[String]>::to_vec,
        );
        let covariate_names = covariate_names.map_or_else(
            || default_names("x", archive.n_covariates),
            <[String]>::to_vec,
        );
        if taxon_names.len() != archive.n_taxa || covariate_names.len() != archive.n_covariates {
            return Err(Error::Dimension(
                "names do not match the archive dimensions".into(),
            ));
        }
        Ok(AnalysisReport {
            threshold,
            global: (0..archive.n_covariates)
                .map(|j| global_test(archive, j, threshold))
                .collect::<Result<_>>()?,
            local: local_tests(archive)?,
            variance: variance_decomposition(archive),
            correlation: factor_correlation(archive),
            taxon_names,
            covariate_names,
        })
    }

    pub fn global_json(&self) -> String {
        let tests: Vec<serde_json::Value> = self
            .global
            .iter()
            .map(|g| {
                serde_json::json!({
                    "covariate": self.covariate_names[g.covariate],
                    "index": g.covariate,
                    "probability": g.probability,
                    "reject": g.reject,
                })
            })
            .collect();
        let doc = serde_json::json!({ "threshold": self.threshold, "tests": tests });
        serde_json::to_string_pretty(&doc).expect("JSON values serialize") + "\n"
    }

    pub fn local_csv(&self) -> String {
        let mut s = String::from("taxon,covariate,mean,lower,upper,excludes_zero\n");
        for t in &self.local {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                csv_field(&self.taxon_names[t.taxon]),
                csv_field(&self.covariate_names[t.covariate]),
                t.mean,
                t.lower,
                t.upper,
                t.excludes_zero
            )
            .expect("string write");
        }
        s
    }

    pub fn eta_csv(&self) -> String {
        let mut s = String::from("taxon,sigma_sq,eta\n");
        for (k, name) in self.taxon_names.iter().enumerate() {
            writeln!(
                s,
                "{},{},{}",
                csv_field(name),
                self.variance.sigma_sq[k],
                self.variance.eta[k]
            )
            .expect("string write");
        }
        s
    }

    /// Correlation matrix with rows and columns in dendrogram order.
    pub fn correlation_csv(&self) -> String {
        let order = &self.correlation.order;
        let mut s = String::from("taxon");
        for &k in order {
            write!(s, ",{}", csv_field(&self.taxon_names[k])).expect("string write");
        }
        s.push('\n');
        for &r in order {
            s.push_str(&csv_field(&self.taxon_names[r]));
            for &c in order {
                write!(s, ",{}", self.correlation.correlation[(r, c)]).expect("string write");
            }
            s.push('\n');
        }
        s
    }

    pub fn dendrogram_csv(&self) -> String {
        let mut s = String::from("merge,left,right,height,size\n");
        for (m, merge) in self.correlation.merges.iter().enumerate() {
            writeln!(
                s,
                "{m},{},{},{},{}",
                merge.left, merge.right, merge.height, merge.size
            )
            .expect("string write");
        }
        s
    }

    /// Writes `global_tests.json`, `local_tests.csv`, `eta.csv`, `correlation.csv` and
    /// `dendrogram.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("global_tests.json", self.global_json()),
            ("local_tests.csv", self.local_csv()),
            ("eta.csv", self.eta_csv()),
            ("correlation.csv", self.correlation_csv()),
            ("dendrogram.csv", self.dendrogram_csv()),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

impl PpcReport {
    pub fn to_csv(&self, sample_names: Option<&[String]>) -> String {
        let mut s = String::from("sample,statistic,observed,lower,upper,flagged\n");
        for r in &self.intervals {
            let name = sample_names.map_or_else(
                || format!("sample{}", r.sample + 1),
                |n| csv_field(&n[r.sample]),
            );
            writeln!(
                s,
                "{name},{},{},{},{},{}",
                r.statistic.name(),
                r.observed,
                r.lower,
                r.upper,
                r.flagged
            )
            .expect("string write");
        }
        s
    }
}

impl CvSummary {
    pub fn to_csv(&self, sample_names: Option<&[String]>) -> String {
        let mut s = String::from("fold,sample,log_lik_a,log_lik_b,difference\n");
        for (f, fold) in self.folds.iter().enumerate() {
            for i in 0..fold.differences.len() {
                let name =
                    sample_names.map_or_else(|| format!("sample{}", i + 1), |n| csv_field(&n[i]));
                writeln!(
                    s,
                    "{},{name},{},{},{}",
                    f + 1,
                    fold.log_lik_a[i],
                    fold.log_lik_b[i],
                    fold.differences[i]
                )
                .expect("string write");
            }
        }
        s
    }
}
