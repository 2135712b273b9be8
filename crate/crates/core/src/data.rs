//! Count tables, experiment designs and the log-ratio link.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Field separator of a delimited text file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    Tab,
    Comma,
    /// Tab if the header line contains a tab, comma otherwise.
    #[default]
    Auto,
}

impl Delimiter {
    fn resolve(self, header: &str) -> char {
        match self {
            Delimiter::Tab => '\t',
            Delimiter::Comma => ',',
            Delimiter::Auto => {
                if header.contains('\t') {
                    '\t'
                } else {
                    ','
                }
            }
        }
    }
}

impl std::str::FromStr for Delimiter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tab" | "tsv" => Ok(Delimiter::Tab),
            "comma" | "csv" => Ok(Delimiter::Comma),
            "auto" => Ok(Delimiter::Auto),
            other => Err(Error::Validation(format!("unknown delimiter `{other}`"))),
        }
    }
}

/// n x K matrix of taxon counts with per-sample totals.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    counts: Vec<u64>,
    n_samples: usize,
    n_taxa: usize,
    sample_ids: Vec<String>,
    taxon_ids: Vec<String>,
    totals: Vec<u64>,
}

impl CountTable {
    /// Builds a table from row-major counts, enforcing every table invariant.
    pub fn new(counts: Vec<u64>, sample_ids: Vec<String>, taxon_ids: Vec<String>) -> Result<Self> {
        let n = sample_ids.len();
        let k = taxon_ids.len();
        if n == 0 || k == 0 {
            return Err(Error::Validation(
                "count table must have at least one sample and one taxon".into(),
            ));
        }
        if counts.len() != n * k {
            return Err(Error::Dimension(format!(
                "{} counts supplied for a {n} x {k} table",
                counts.len()
            )));
        }
        check_unique(&sample_ids, "sample")?;
        check_unique(&taxon_ids, "taxon")?;
        let totals: Vec<u64> = counts.chunks(k).map(|row| row.iter().sum()).collect();
        if let Some(i) = totals.iter().position(|&m| m == 0) {
            return Err(Error::Validation(format!(
                "sample `{}` has zero total count",
                sample_ids[i]
            )));
        }
        for (col, id) in taxon_ids.iter().enumerate() {
            if (0..n).all(|i| counts[i * k + col] == 0) {
                return Err(Error::Validation(format!("taxon `{id}` is never observed")));
            }
        }
        Ok(CountTable {
            counts,
            n_samples: n,
            n_taxa: k,
            sample_ids,
            taxon_ids,
            totals,
        })
    }

    /// Builds a table with generated ids (`S1..`, `T1..`).
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("ragged count rows".into()));
        }
        let counts = rows.iter().flatten().copied().collect();
        let sample_ids = (1..=rows.len()).map(|i| format!("S{i}")).collect();
        let taxon_ids = (1..=k).map(|j| format!("T{j}")).collect();
        CountTable::new(counts, sample_ids, taxon_ids)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_taxa(&self) -> usize {
        self.n_taxa
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.counts[i * self.n_taxa..(i + 1) * self.n_taxa]
    }

    pub fn get(&self, i: usize, k: usize) -> u64 {
        self.counts[i * self.n_taxa + k]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn taxon_ids(&self) -> &[String] {
        &self.taxon_ids
    }

    /// Writes the table as tab-delimited text readable by [`load_count_table`].
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("sample");
        for t in &self.taxon_ids {
            out.push('\t');
            out.push_str(t);
        }
        out.push('\n');
        for i in 0..self.n_samples {
            out.push_str(&self.sample_ids[i]);
            for c in self.row(i) {
                out.push('\t');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if let Some(first) = seen.insert(id.as_str(), i) {
            return Err(Error::Validation(format!(
                "duplicate {what} id `{id}` (positions {} and {})",
                first + 1,
                i + 1
            )));
        }
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect())
}

/// Loads a delimited count table: header row of taxon ids, first column of sample ids.
pub fn load_count_table(path: &Path, delimiter: Delimiter) -> Result<CountTable> {
    let name = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: name.clone(),
        line,
        message,
    };
    let lines = read_lines(path)?;
    let (header_line, header) = lines
        .first()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    let sep = delimiter.resolve(header);
    let taxon_ids: Vec<String> = header
        .split(sep)
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    if taxon_ids.is_empty() {
        return Err(parse_err(
            *header_line,
            "header has no taxon columns".into(),
        ));
    }
    if let Some(pos) = taxon_ids.iter().position(|t| t.is_empty()) {
        return Err(parse_err(
            *header_line,
            format!("empty taxon id in column {}", pos + 2),
        ));
    }
    let k = taxon_ids.len();
    let mut sample_ids = Vec::with_capacity(lines.len() - 1);
    let mut counts = Vec::with_capacity((lines.len() - 1) * k);
    for (line_no, line) in &lines[1..] {
        let mut cells = line.split(sep);
        let id = cells.next().unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(parse_err(*line_no, "missing sample id".into()));
        }
        let mut n_cells = 0;
        for (col, cell) in cells.enumerate() {
            if col >= k {
                return Err(parse_err(
                    *line_no,
                    format!("sample `{id}` has more than {k} count cells"),
                ));
            }
            let cell = cell.trim();
            let value: u64 = cell.parse().map_err(|_| {
                parse_err(
                    *line_no,
                    format!(
                        "sample `{id}`, taxon `{}`: `{cell}` is not a nonnegative integer",
                        taxon_ids[col]
                    ),
                )
            })?;
            counts.push(value);
            n_cells += 1;
        }
        if n_cells != k {
            return Err(parse_err(
                *line_no,
                format!("sample `{id}` has {n_cells} count cells, expected {k}"),
            ));
        }
        sample_ids.push(id);
    }
    CountTable::new(counts, sample_ids, taxon_ids).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{name}: {msg}")),
        other => other,
    })
}

/// How the columns of a design file enter the model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DesignSpec {
    /// Numeric covariate columns, in model order.
    pub covariates: Vec<String>,
    /// Product columns `a*b`, appended after the plain covariates.
    pub interactions: Vec<(String, String)>,
    /// Random-effect factors, outermost first. Each level is nested in the previous one.
    pub factors: Vec<String>,
}

impl DesignSpec {
    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates
            .iter()
            .cloned()
            .chain(self.interactions.iter().map(|(a, b)| format!("{a}:{b}")))
            .collect()
    }
}

/// One random-effect level: a map from samples to blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFactor {
    pub name: String,
    /// Zero-based block index for every sample.
    pub assignment: Vec<usize>,
    /// Block labels in first-appearance order.
    pub labels: Vec<String>,
}

impl RandomFactor {
    pub fn n_levels(&self) -> usize {
        self.labels.len()
    }

    /// Builds a factor from per-sample labels, indexing labels by first appearance.
    pub fn from_labels(name: impl Into<String>, labels: &[String]) -> Self {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut ordered = Vec::new();
        let assignment = labels
            .iter()
            .map(|l| {
                *index.entry(l.as_str()).or_insert_with(|| {
                    ordered.push(l.clone());
                    ordered.len() - 1
                })
            })
            .collect();
        RandomFactor {
            name: name.into(),
            assignment,
            labels: ordered,
        }
    }
}

/// Fixed-effect covariates plus a nesting chain of random-effect factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDesign {
    covariates: DMatrix<f64>,
    covariate_names: Vec<String>,
    factors: Vec<RandomFactor>,
    sample_ids: Vec<String>,
}

impl ExperimentDesign {
    pub fn new(
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
        factors: Vec<RandomFactor>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        let p = covariates.ncols();
        if p == 0 {
            return Err(Error::Validation(
                "design needs at least one covariate".into(),
            ));
        }
        if covariate_names.len() != p {
            return Err(Error::Dimension(format!(
                "{} covariate names for {p} columns",
                covariate_names.len()
            )));
        }
        if sample_ids.len() != n {
            return Err(Error::Dimension(format!(
                "{} sample ids for {n} design rows",
                sample_ids.len()
            )));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "covariates contain missing or non-finite values".into(),
            ));
        }
        for (j, name) in covariate_names.iter().enumerate() {
            if covariates.column(j).iter().all(|&v| v == 0.0) {
                return Err(Error::Validation(format!(
                    "covariate `{name}` is zero for every sample"
                )));
            }
        }
        for f in &factors {
            if f.assignment.len() != n {
                return Err(Error::Dimension(format!(
                    "factor `{}` assigns {} samples, expected {n}",
                    f.name,
                    f.assignment.len()
                )));
            }
            let mut used = vec![false; f.n_levels()];
            for &z in &f.assignment {
                if z >= f.n_levels() {
                    return Err(Error::Validation(format!(
                        "factor `{}` has out-of-range block index {z}",
                        f.name
                    )));
                }
                used[z] = true;
            }
            if let Some(r) = used.iter().position(|u| !u) {
                return Err(Error::Validation(format!(
                    "factor `{}` block `{}` has no samples",
                    f.name, f.labels[r]
                )));
            }
        }
        Ok(ExperimentDesign {
            covariates,
            covariate_names,
            factors,
            sample_ids,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn factors(&self) -> &[RandomFactor] {
        &self.factors
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// Number of blocks for every random-effect level.
    pub fn level_counts(&self) -> Vec<usize> {
        self.factors.iter().map(RandomFactor::n_levels).collect()
    }

    /// Writes the design as a tab-delimited file with one column per covariate and factor.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("sample");
        for name in &self.covariate_names {
            out.push('\t');
            out.push_str(name);
        }
        for f in &self.factors {
            out.push('\t');
            out.push_str(&f.name);
        }
        out.push('\n');
        for i in 0..self.n_samples() {
            out.push_str(&self.sample_ids[i]);
            for j in 0..self.n_covariates() {
                out.push('\t');
                out.push_str(&format!("{}", self.covariates[(i, j)]));
            }
            for f in &self.factors {
                out.push('\t');
                out.push_str(&f.labels[f.assignment[i]]);
            }
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Loads a design file with a header row and a leading sample-id column.
///
/// Nested factor labels are qualified by their enclosing factor (`site/block`), so
/// block `1` at two sites yields two distinct blocks.
pub fn load_design(
    path: &Path,
    delimiter: Delimiter,
    spec: &DesignSpec,
    n_expected: usize,
) -> Result<ExperimentDesign> {
    let name = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: name.clone(),
        line,
        message,
    };
    let lines = read_lines(path)?;
    let (header_line, header) = lines
        .first()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    let sep = delimiter.resolve(header);
    let columns: Vec<String> = header.split(sep).map(|s| s.trim().to_string()).collect();
    let column_of = |col: &str| -> Result<usize> {
        columns
            .iter()
            .skip(1)
            .position(|c| c == col)
            .map(|p| p + 1)
            .ok_or_else(|| parse_err(*header_line, format!("design has no column `{col}`")))
    };
    let n = lines.len() - 1;
    if n != n_expected {
        return Err(Error::Validation(format!(
            "{name}: design has {n} rows but the count table has {n_expected} samples"
        )));
    }

    let mut rows: Vec<(usize, Vec<String>)> = Vec::with_capacity(n);
    for (line_no, line) in &lines[1..] {
        let cells: Vec<String> = line.split(sep).map(|s| s.trim().to_string()).collect();
        if cells.len() != columns.len() {
            return Err(parse_err(
                *line_no,
                format!("{} cells, header has {}", cells.len(), columns.len()),
            ));
        }
        rows.push((*line_no, cells));
    }
    let sample_ids: Vec<String> = rows.iter().map(|(_, c)| c[0].clone()).collect();
    check_unique(&sample_ids, "sample")?;

    let numeric = |col: usize| -> Result<Vec<f64>> {
        rows.iter()
            .map(|(line_no, cells)| {
                let cell = &cells[col];
                if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                    return Err(parse_err(
                        *line_no,
                        format!("missing value in column `{}`", columns[col]),
                    ));
                }
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        parse_err(
                            *line_no,
                            format!("`{cell}` in column `{}` is not a number", columns[col]),
                        )
                    })
            })
            .collect()
    };

    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut by_name: HashMap<&str, usize> = HashMap::new();
    for cov in &spec.covariates {
        by_name.insert(cov.as_str(), values.len());
        values.push(numeric(column_of(cov)?)?);
    }
    for (a, b) in &spec.interactions {
        let lhs = match by_name.get(a.as_str()) {
            Some(&ix) => values[ix].clone(),
            None => numeric(column_of(a)?)?,
        };
        let rhs = match by_name.get(b.as_str()) {
            Some(&ix) => values[ix].clone(),
            None => numeric(column_of(b)?)?,
        };
        values.push(lhs.iter().zip(&rhs).map(|(x, y)| x * y).collect());
    }
    let p = values.len();
    let covariates = DMatrix::from_fn(n, p, |i, j| values[j][i]);

    let mut factors = Vec::with_capacity(spec.factors.len());
    let mut qualified: Vec<String> = vec![String::new(); n];
    for factor in &spec.factors {
        let col = column_of(factor)?;
        for (i, (line_no, cells)) in rows.iter().enumerate() {
            let cell = &cells[col];
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                return Err(parse_err(
                    *line_no,
                    format!("missing level in factor column `{factor}`"),
                ));
            }
            qualified[i] = if qualified[i].is_empty() {
                cell.clone()
            } else {
                format!("{}/{}", qualified[i], cell)
            };
        }
        factors.push(RandomFactor::from_labels(factor.clone(), &qualified));
    }

    ExperimentDesign::new(covariates, spec.covariate_names(), factors, sample_ids).map_err(|e| {
        match e {
            Error::Validation(msg) => Error::Validation(format!("{name}: {msg}")),
            other => other,
        }
    })
}

/// Maps log-ratio coordinates onto the simplex (softmax with max subtraction).
pub fn inverse_log_ratio(theta: &[f64]) -> Result<Vec<f64>> {
    if theta.is_empty() {
        return Err(Error::Validation("empty log-ratio vector".into()));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Validation(
            "log-ratio vector has non-finite entries".into(),
        ));
    }
    let mut phi = vec![0.0; theta.len()];
    softmax_into(theta, &mut phi);
    Ok(phi)
}

/// Unchecked softmax used on sampler hot paths.
pub(crate) fn softmax_into(theta: &[f64], out: &mut [f64]) {
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &t) in out.iter_mut().zip(theta) {
        *o = (t - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// A latent composition in both coordinate systems.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    theta: Vec<f64>,
    phi: Vec<f64>,
}

impl Composition {
    pub fn from_theta(theta: Vec<f64>) -> Result<Self> {
        let phi = inverse_log_ratio(&theta)?;
        Ok(Composition { theta, phi })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }
}
