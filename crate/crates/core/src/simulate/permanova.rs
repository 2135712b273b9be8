//! Bray-Curtis dissimilarity and the one-term permutation test on distances.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::CountTable;
use crate::error::{Error, Result};

/// Smallest permutation count accepted by [`permanova`].
pub const MIN_PERMUTATIONS: usize = 999;

/// `BC(i, j) = 1 - 2 sum_k min(Y_ik, Y_jk) / (m_i + m_j)`.
pub fn bray_curtis(table: &CountTable) -> DMatrix<f64> {
    let n = table.n_samples();
    let totals = table.totals();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let shared: u64 = table
                .row(i)
                .iter()
                .zip(table.row(j))
                .map(|(a, b)| *a.min(b))
                .sum();
            let v = 1.0 - 2.0 * shared as f64 / (totals[i] + totals[j]) as f64;
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermanovaResult {
    pub f_statistic: f64,
    pub p_value: f64,
    pub n_perm: usize,
}

/// Groups samples by distinct covariate value, in first-appearance order.
fn group_labels(values: &[f64]) -> (Vec<usize>, usize) {
    let mut seen: Vec<f64> = Vec::new();
    let labels = values
        .iter()
        .map(|v| match seen.iter().position(|s| s == v) {
            Some(g) => g,
            None => {
                seen.push(*v);
                seen.len() - 1
            }
        })
        .collect();
    (labels, seen.len())
}

/// Pseudo-F of one grouping: total SS is `sum_{i<j} d_ij^2 / n`, within-group SS the same sum
/// per group over its size, and `F = (SS_A / (a - 1)) / (SS_W / (n - a))`.
pub fn pseudo_f(sq_dist: &DMatrix<f64>, labels: &[usize], n_groups: usize) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    let mut within = vec![0.0; n_groups];
    let mut sizes = vec![0usize; n_groups];
    for i in 0..n {
        sizes[labels[i]] += 1;
        for j in i + 1..n {
            let d2 = sq_dist[(i, j)];
            total += d2;
            if labels[i] == labels[j] {
                within[labels[i]] += d2;
            }
        }
    }
    let ss_t = total / n as f64;
    let ss_w: f64 = within.iter().zip(&sizes).map(|(w, s)| w / *s as f64).sum();
    let ss_a = ss_t - ss_w;
    (ss_a / (n_groups - 1) as f64) / (ss_w / (n - n_groups) as f64)
}

/// Permutation test of covariate `values` against `distances`, permuting labels only within
/// the blocks in `strata` (all samples form one stratum when `None`).
pub fn permanova<R: Rng + ?Sized>(
    distances: &DMatrix<f64>,
    values: &[f64],
    strata: Option<&[usize]>,
    n_perm: usize,
    rng: &mut R,
) -> Result<PermanovaResult> {
    let n = distances.nrows();
    if distances.ncols() != n || values.len() != n {
        return Err(Error::Dimension(format!(
            "{}x{} distances for {} samples",
            distances.nrows(),
            distances.ncols(),
            values.len()
        )));
    }
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::InvalidParameter(format!(
            "PERMANOVA needs at least {MIN_PERMUTATIONS} permutations, got {n_perm}"
        )));
    }
    let (mut labels, n_groups) = group_labels(values);
    if n_groups < 2 {
        return Err(Error::Validation(
            "the tested covariate takes a single value".into(),
        ));
    }
    for g in 0..n_groups {
        if labels.iter().filter(|l| **l == g).count() < 2 {
            return Err(Error::Validation(format!(
                "group with covariate value {} has fewer than two members",
                values[labels
                    .iter()
                    .position(|l| *l == g)
                    .expect("group is present")]
            )));
        }
    }
    let strata_members: Vec<Vec<usize>> = match strata {
        None => vec![(0..n).collect()],
        Some(s) => {
            if s.len() != n {
                return Err(Error::Dimension(format!(
                    "{} strata labels for {n} samples",
                    s.len()
                )));
            }
            let q = s.iter().max().map_or(0, |m| m + 1);
            let mut members = vec![Vec::new(); q];
            for (i, &b) in s.iter().enumerate() {
                members[b].push(i);
            }
            members
        }
    };

    let sq = distances.map(|d| d * d);
    let observed = pseudo_f(&sq, &labels, n_groups);
    // Relative slack so permutations reproducing the observed partition count as ties.
    let cutoff = if observed.is_finite() {
        observed - 1e-10 * observed.abs().max(1.0)
    } else {
        observed
    };
    let mut at_least = 0usize;
    let mut block_labels = Vec::new();
    for _ in 0..n_perm {
        for members in &strata_members {
            block_labels.clear();
            block_labels.extend(members.iter().map(|&i| labels[i]));
            block_labels.shuffle(rng);
            for (&i, &l) in members.iter().zip(&block_labels) {
                labels[i] = l;
            }
        }
        if pseudo_f(&sq, &labels, n_groups) >= cutoff {
            at_least += 1;
        }
    }
    Ok(PermanovaResult {
        f_statistic: observed,
        p_value: (1 + at_least) as f64 / (1 + n_perm) as f64,
        n_perm,
    })
}
