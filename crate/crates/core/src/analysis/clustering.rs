//! Complete-linkage agglomerative clustering by the nearest-neighbour chain.

use nalgebra::DMatrix;

/// One agglomeration. Ids below `n` are leaves; merge `m` creates id `n + m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// The child whose smallest leaf index is lower.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// Complete-linkage merges of a symmetric dissimilarity matrix, sorted by height.
pub fn complete_linkage(distance: &DMatrix<f64>) -> Vec<Merge> {
    let n = distance.nrows();
    assert_eq!(n, distance.ncols(), "distance matrix must be square");
    if n < 2 {
        return Vec::new();
    }
    let mut d = distance.clone();
    let mut active = vec![true; n];
    // A cluster lives in the slot of its smallest leaf.
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::new();

    while raw.len() < n - 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|a| *a).expect("an active cluster"));
        }
        let a = *chain.last().expect("chain is not empty");
        let prev = chain.len().checked_sub(2).map(|i| chain[i]);
        let mut best: Option<(usize, f64)> = None;
        for c in (0..n).filter(|&c| active[c] && c != a) {
            let dc = d[(a, c)];
            let better = match best {
                None => true,
                // ties go to the previous chain element so reciprocal pairs are found
                Some((b, db)) => dc < db || (dc == db && Some(c) == prev && Some(b) != prev),
            };
            if better {
                best = Some((c, dc));
            }
        }
        let (b, height) = best.expect("at least two active clusters");
        if Some(b) == prev {
            chain.truncate(chain.len() - 2);
            let (keep, drop) = (a.min(b), a.max(b));
            for c in 0..n {
                if active[c] && c != keep && c != drop {
                    let v = d[(keep, c)].max(d[(drop, c)]);
                    d[(keep, c)] = v;
                    d[(c, keep)] = v;
                }
            }
            active[drop] = false;
            raw.push((keep, drop, height));
        } else {
            chain.push(b);
        }
    }

    raw.sort_by(|x, y| x.2.total_cmp(&y.2));
    // Union-find over leaves to translate slot pairs into cluster ids.
    let mut parent: Vec<usize> = (0..n).collect();
    let mut cluster_id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n - 1);
    for (m, (x, y, height)) in raw.into_iter().enumerate() {
        let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
        let (lo, hi) = if rx < ry { (rx, ry) } else { (ry, rx) };
        let merged = size[lo] + size[hi];
        merges.push(Merge {
            left: cluster_id[lo],
            right: cluster_id[hi],
            height,
            size: merged,
        });
        parent[hi] = lo;
        size[lo] = merged;
        cluster_id[lo] = n + m;
    }
    merges
}

/// Leaves in dendrogram order, left subtree first.
pub fn leaf_order(n: usize, merges: &[Merge]) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    if merges.is_empty() {
        return (0..n).collect();
    }
    let mut out = Vec::with_capacity(n);
    let mut stack = vec![n + merges.len() - 1];
    while let Some(id) = stack.pop() {
        if id < n {
            out.push(id);
        } else {
            let m = &merges[id - n];
            stack.push(m.right);
            stack.push(m.left);
        }
    }
    out
}
