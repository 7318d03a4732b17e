//! Endpoint coupling: pair source and target minibatches either uniformly
//! at random or through exact minibatch optimal transport under the
//! symmetric Poisson cost
//!
//! ```text
//! c(x, y) = sum_i [ x_i log((x_i + eps_c)/(y_i + eps_c))
//!                 + y_i log((y_i + eps_c)/(x_i + eps_c)) ]
//! ```
//!
//! With equal batch sizes and uniform weights an optimal coupling is a
//! permutation, so the OT step reduces to a balanced assignment problem,
//! solved exactly by a shortest-augmenting-path method in O(B^3). Ties
//! between equal-cost assignments are broken toward the lexicographically
//! smallest permutation so repeated runs pair identically.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::types::{CountVector, CouplingKind, EndpointBatch, EndpointPair};

/// Dense square cost matrix, row-major.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        CostMatrix { n, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::dim("cost matrix must be square".to_string()));
        }
        Ok(CostMatrix {
            n,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Symmetric Poisson transport cost between two count vectors. Symmetric,
/// nonnegative, and zero exactly when `x == y`.
pub fn symmetric_poisson_cost(x: &CountVector, y: &CountVector, eps_c: f64) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::dim(format!(
            "cost arguments have dimensions {} and {}",
            x.dim(),
            y.dim()
        )));
    }
    if !(eps_c > 0.0) {
        return Err(Error::invalid(format!("eps_c must be positive, got {eps_c}")));
    }
    let mut total = 0.0;
    for (&xi, &yi) in x.iter().zip(y.iter()) {
        if xi == yi {
            continue;
        }
        // x log((x+e)/(y+e)) + y log((y+e)/(x+e)) == (hi - lo) log((hi+e)/(lo+e));
        // evaluating in (lo, hi) order makes symmetry bit-exact.
        let (lo, hi) = (xi.min(yi) as f64, xi.max(yi) as f64);
        total += (hi - lo) * ((hi + eps_c) / (lo + eps_c)).ln();
    }
    Ok(total)
}

/// Exact solution of the balanced assignment problem: returns the
/// permutation `sigma` minimizing `sum_i cost[i, sigma(i)]`.
///
/// Shortest augmenting paths with dual potentials, O(n^3). Among
/// minimizers the lexicographically smallest permutation is returned
/// (exact-arithmetic ties; float ties are resolved within a small
/// relative tolerance).
pub fn solve_assignment(cost: &CostMatrix) -> Result<Vec<usize>> {
    let n = cost.n();
    if n == 0 {
        return Ok(Vec::new());
    }
    if cost.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cost matrix contains non-finite entries"));
    }

    // Row/column potentials; col_to_row[j] = row matched to column j,
    // with `n` used as the virtual start column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_to_row: Vec<usize> = vec![n; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 0..n {
        col_to_row[n] = i;
        let mut j0 = n;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_to_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = n;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_to_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_to_row[j0] == n {
                break;
            }
        }
        // Augment along the recorded path.
        loop {
            let j1 = way[j0];
            col_to_row[j0] = col_to_row[j1];
            j0 = j1;
            if j0 == n {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 0..n {
        if col_to_row[j] != n {
            perm[col_to_row[j]] = j;
        }
    }
    refine_lexicographic(cost, &mut perm, &u, &v);
    Ok(perm)
}

/// Move an optimal assignment to the lexicographically smallest optimal
/// permutation by rerouting within the zero-reduced-cost edge set. By
/// complementary slackness any perfect matching on those edges attains
/// the optimal cost.
fn refine_lexicographic(cost: &CostMatrix, perm: &mut [usize], u: &[f64], v: &[f64]) {
    let n = perm.len();
    let scale = cost.data.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
    let tol = 1e-9 * (1.0 + scale);
    let admissible = |i: usize, j: usize| cost.get(i, j) - u[i] - v[j] <= tol;

    let original_cost = assignment_cost(cost, perm);
    let original: Vec<usize> = perm.to_vec();

    let mut row_of_col = vec![usize::MAX; n];
    for (i, &j) in perm.iter().enumerate() {
        row_of_col[j] = i;
    }

    for i in 0..n {
        let current = perm[i];
        for j in 0..current {
            if !admissible(i, j) {
                continue;
            }
            let owner = row_of_col[j];
            if owner < i {
                continue; // column held by an already-fixed row
            }
            // Tentatively give column j to row i and reroute the displaced
            // row through admissible edges; row i's old column is freed.
            perm[i] = j;
            row_of_col[j] = i;
            row_of_col[current] = usize::MAX;
            let mut visited = vec![false; n];
            visited[j] = true;
            if reroute(cost, perm, &mut row_of_col, &mut visited, owner, i, &admissible) {
                break;
            }
            // Revert the tentative move.
            perm[i] = current;
            row_of_col[current] = i;
            row_of_col[j] = owner;
        }
    }

    // Rerouting within admissible edges cannot change the cost beyond
    // tolerance; fall back to the unrefined optimum if it somehow did.
    if assignment_cost(cost, perm) > original_cost + tol * n as f64 {
        perm.copy_from_slice(&original);
    }
}

fn reroute(
    cost: &CostMatrix,
    perm: &mut [usize],
    row_of_col: &mut [usize],
    visited: &mut [bool],
    row: usize,
    fixed_below: usize,
    admissible: &impl Fn(usize, usize) -> bool,
) -> bool {
    let n = perm.len();
    for col in 0..n {
        if visited[col] || !admissible(row, col) {
            continue;
        }
        let owner = row_of_col[col];
        if owner != usize::MAX && owner <= fixed_below {
            continue; // locked by a fixed row
        }
        visited[col] = true;
        if owner == usize::MAX
            || reroute(cost, perm, row_of_col, visited, owner, fixed_below, admissible)
        {
            perm[row] = col;
            row_of_col[col] = row;
            return true;
        }
    }
    false
}

/// Total cost of a permutation assignment.
pub fn assignment_cost(cost: &CostMatrix, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum()
}

fn check_batches(source: &[CountVector], target: &[CountVector]) -> Result<usize> {
    if source.len() != target.len() {
        return Err(Error::dim(format!(
            "batch sizes differ: {} source vs {} target",
            source.len(),
            target.len()
        )));
    }
    if source.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let d = source[0].dim();
    if source.iter().chain(target.iter()).any(|x| x.dim() != d) {
        return Err(Error::dim("all batch vectors must share one dimension".to_string()));
    }
    Ok(source.len())
}

/// Pair `source[i]` with `target[sigma(i)]` for a uniformly random
/// permutation `sigma`; equivalent in distribution to independent draws
/// when the batches are i.i.d. Condition labels, when given, follow the
/// target sample.
pub fn independent_pairs(
    source: &[CountVector],
    target: &[CountVector],
    labels: Option<&[usize]>,
    rng: &mut impl Rng,
) -> Result<EndpointBatch> {
    let b = check_batches(source, target)?;
    if let Some(l) = labels {
        if l.len() != b {
            return Err(Error::dim("label count must match batch size".to_string()));
        }
    }
    let mut sigma: Vec<usize> = (0..b).collect();
    sigma.shuffle(rng);
    let pairs = sigma
        .iter()
        .enumerate()
        .map(|(i, &j)| EndpointPair {
            x0: source[i].clone(),
            x1: target[j].clone(),
            condition: labels.map(|l| l[j]),
        })
        .collect();
    Ok(EndpointBatch {
        pairs,
        coupling_kind: CouplingKind::Independent,
    })
}

/// Pair the batches through exact minibatch optimal transport under the
/// symmetric Poisson cost. The returned pairing is the cost-minimizing
/// permutation.
pub fn ot_pairs(
    source: &[CountVector],
    target: &[CountVector],
    labels: Option<&[usize]>,
    eps_c: f64,
) -> Result<EndpointBatch> {
    let b = check_batches(source, target)?;
    if let Some(l) = labels {
        if l.len() != b {
            return Err(Error::dim("label count must match batch size".to_string()));
        }
    }
    let mut cost = Ok(());
    let matrix = CostMatrix::from_fn(b, |i, j| {
        match symmetric_poisson_cost(&source[i], &target[j], eps_c) {
            Ok(c) => c,
            Err(e) => {
                cost = Err(e);
                f64::NAN
            }
        }
    });
    cost?;
    let perm = solve_assignment(&matrix)?;
    let pairs = perm
        .iter()
        .enumerate()
        .map(|(i, &j)| EndpointPair {
            x0: source[i].clone(),
            x1: target[j].clone(),
            condition: labels.map(|l| l[j]),
        })
        .collect();
    Ok(EndpointBatch {
        pairs,
        coupling_kind: CouplingKind::Ot,
    })
}

/// OT pairing restricted to matching groups: the assignment is solved
/// independently within each group id, so no pair crosses group
/// boundaries. Requires each group to appear equally often on both sides.
pub fn ot_pairs_grouped(
    source: &[CountVector],
    source_groups: &[usize],
    target: &[CountVector],
    target_groups: &[usize],
    labels: Option<&[usize]>,
    eps_c: f64,
) -> Result<EndpointBatch> {
    let b = check_batches(source, target)?;
    if source_groups.len() != b || target_groups.len() != b {
        return Err(Error::dim("group annotations must match batch size".to_string()));
    }
    let mut groups: Vec<usize> = source_groups.to_vec();
    groups.sort_unstable();
    groups.dedup();
    let mut pairs = Vec::with_capacity(b);
    for g in groups {
        let src_idx: Vec<usize> = (0..b).filter(|&i| source_groups[i] == g).collect();
        let tgt_idx: Vec<usize> = (0..b).filter(|&i| target_groups[i] == g).collect();
        if src_idx.len() != tgt_idx.len() {
            return Err(Error::invalid(format!(
                "group {g} has {} source and {} target samples",
                src_idx.len(),
                tgt_idx.len()
            )));
        }
        let src: Vec<CountVector> = src_idx.iter().map(|&i| source[i].clone()).collect();
        let tgt: Vec<CountVector> = tgt_idx.iter().map(|&i| target[i].clone()).collect();
        let group_labels: Option<Vec<usize>> =
            labels.map(|l| tgt_idx.iter().map(|&i| l[i]).collect());
        let batch = ot_pairs(&src, &tgt, group_labels.as_deref(), eps_c)?;
        pairs.extend(batch.pairs);
    }
    if source_groups.iter().any(|g| !target_groups.contains(g))
        || target_groups.iter().any(|g| !source_groups.contains(g))
    {
        return Err(Error::invalid("source and target group sets differ"));
    }
    Ok(EndpointBatch {
        pairs,
        coupling_kind: CouplingKind::Ot,
    })
}
