//! Vector monotone rearrangement.
//!
//! With uniform weights on both sides, optimal transport between the grid
//! levels and the rows of a discrete CVQF has a permutation optimum, so the
//! rearrangement is a linear assignment maximising `Σ_i u_iᵀ q_σ(i)`. In one
//! dimension this is sorting.

use ndarray::Array2;

use crate::cvqf::{comonotone_product, DiscreteCvqf};
use crate::error::{shape_err, Error, Result};

/// Largest grid the rearrangement accepts.
pub const MAX_VMR_LEVELS: usize = 10_000;

/// Permutation `σ` maximising `Σ_i scores[i, σ(i)]`. Among optimal
/// permutations the lexicographically smallest `(σ(0), σ(1), ...)` is returned.
pub fn solve_assignment(scores: &Array2<f64>) -> Result<Vec<usize>> {
    let (n, m) = scores.dim();
    if n != m {
        return Err(shape_err(format!("assignment needs a square matrix, got {n}x{m}")));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("assignment scores must be finite".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let cost = scores.mapv(|v| -v);
    let (assign, u, v) = hungarian(&cost);
    let scale = 1.0 + cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let tol = 1e-9 * scale;
    Ok(lexicographic_optimum(&cost, &u, &v, assign, tol))
}

/// Shortest augmenting path Hungarian method on a dense cost matrix
/// (minimisation). Returns row -> column and the dual potentials, with
/// `cost[i][j] - u[i] - v[j] >= 0` and equality on matched pairs.
fn hungarian(cost: &Array2<f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.nrows();
    // 1-based internally; index 0 is the virtual start column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            let row = cost.row(i0 - 1);
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    (assign, u[1..].to_vec(), v[1..].to_vec())
}

/// Walk rows in order and give each the smallest tight column that still
/// leaves a perfect matching of tight edges on the remaining rows and columns.
/// Feasibility is restored with an alternating path from the displaced row to
/// the column the current row gives up.
fn lexicographic_optimum(cost: &Array2<f64>, u: &[f64], v: &[f64], mut row_to_col: Vec<usize>, tol: f64) -> Vec<usize> {
    let n = row_to_col.len();
    let tight = |i: usize, j: usize| cost[[i, j]] - u[i] - v[j] <= tol;
    let mut col_to_row = vec![0usize; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    let mut col_fixed = vec![false; n];
    for i in 0..n {
        let current = row_to_col[i];
        for j in 0..current {
            if col_fixed[j] || !tight(i, j) {
                continue;
            }
            // row `other` loses column j and must reach `current`
            let other = col_to_row[j];
            if let Some(path) = alternating_path(other, current, j, i, &tight, &col_fixed, &col_to_row, n) {
                // path: columns visited from `other` onwards, ending at `current`
                let mut row = other;
                for &c in &path {
                    let next_row = col_to_row[c];
                    row_to_col[row] = c;
                    col_to_row[c] = row;
                    row = next_row;
                }
                row_to_col[i] = j;
                col_to_row[j] = i;
                break;
            }
        }
        col_fixed[row_to_col[i]] = true;
    }
    row_to_col
}

/// Breadth-first search for an alternating path of tight edges from row
/// `start` to column `target`, avoiding fixed columns, column `banned` and row
/// `skip_row`. Returns the columns taken, in order.
#[allow(clippy::too_many_arguments)]
fn alternating_path(
    start: usize,
    target: usize,
    banned: usize,
    skip_row: usize,
    tight: &impl Fn(usize, usize) -> bool,
    col_fixed: &[bool],
    col_to_row: &[usize],
    n: usize,
) -> Option<Vec<usize>> {
    let mut prev_col: Vec<Option<usize>> = vec![None; n];
    let mut seen_col = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    // (row, column that led to it)
    queue.push_back((start, None::<usize>));
    let mut row_parent: Vec<Option<usize>> = vec![None; n];
    let mut seen_row = vec![false; n];
    seen_row[start] = true;
    while let Some((row, _)) = queue.pop_front() {
        for c in 0..n {
            if seen_col[c] || col_fixed[c] || c == banned || !tight(row, c) {
                continue;
            }
            seen_col[c] = true;
            prev_col[c] = row_parent[row];
            if c == target {
                let mut path = vec![c];
                let mut at = prev_col[c];
                while let Some(pc) = at {
                    path.push(pc);
                    at = prev_col[pc];
                }
                path.reverse();
                return Some(path);
            }
            let r = col_to_row[c];
            if r == skip_row || seen_row[r] {
                continue;
            }
            seen_row[r] = true;
            row_parent[r] = Some(c);
            queue.push_back((r, Some(c)));
        }
    }
    None
}

/// Permute the rows of `cvqf` into the co-monotone arrangement closest to it
/// in the optimal transport sense.
pub fn rearrange(cvqf: &DiscreteCvqf) -> Result<DiscreteCvqf> {
    let levels = cvqf.grid().levels();
    let n = levels.nrows();
    if n > MAX_VMR_LEVELS {
        return Err(Error::Size(format!(
            "rearrangement solves an exact {n}x{n} assignment; reduce T^d to at most {MAX_VMR_LEVELS}"
        )));
    }
    let values = cvqf.values();
    let scores = levels.dot(&values.t());
    let sigma = solve_assignment(&scores)?;
    let mut out = Array2::zeros(values.raw_dim());
    for (i, &j) in sigma.iter().enumerate() {
        out.row_mut(i).assign(&values.row(j));
    }
    remove_pair_violations(levels, &mut out);
    cvqf.with_values(out)
}

/// Round-off can leave a pair whose swap would raise the assignment value by a
/// few ulps; swap such pairs until none remain. Each swap strictly increases
/// `Σ u_iᵀ q_i`, so this terminates.
fn remove_pair_violations(levels: &Array2<f64>, values: &mut Array2<f64>) {
    let n = levels.nrows();
    loop {
        let mut swapped = false;
        for i in 0..n {
            for j in i + 1..n {
                if comonotone_product(levels, values, i, j) < 0.0 {
                    for c in 0..values.ncols() {
                        values.swap([i, c], [j, c]);
                    }
                    swapped = true;
                }
            }
        }
        if !swapped {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::QuantileGrid;
    use ndarray::array;
    use std::sync::Arc;

    fn brute_force(scores: &Array2<f64>) -> (f64, Vec<usize>) {
        let n = scores.nrows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = (f64::NEG_INFINITY, perm.clone());
        permute(&mut perm, 0, scores, &mut best);
        best
    }

    fn permute(p: &mut Vec<usize>, k: usize, s: &Array2<f64>, best: &mut (f64, Vec<usize>)) {
        if k == p.len() {
            let val: f64 = p.iter().enumerate().map(|(i, &j)| s[[i, j]]).sum();
            if val > best.0 + 1e-12 || ((val - best.0).abs() <= 1e-12 && *p < best.1) {
                *best = (val, p.clone());
            }
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, s, best);
            p.swap(k, i);
        }
    }

    #[test]
    fn diagonal_dominant_is_identity() {
        let s = Array2::from_shape_fn((5, 5), |(i, j)| if i == j { 10.0 } else { 1.0 });
        assert_eq!(solve_assignment(&s).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn anti_diagonal() {
        let s = array![[0.0, 0.0, 5.0], [0.0, 5.0, 0.0], [5.0, 0.0, 0.0]];
        assert_eq!(solve_assignment(&s).unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let s = Array2::from_elem((4, 4), 1.0);
        assert_eq!(solve_assignment(&s).unwrap(), vec![0, 1, 2, 3]);
        // rows 0 and 1 are identical, so swapping their columns is also optimal
        let s = array![[1.0, 3.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 2.0]];
        let (val, want) = brute_force(&s);
        let got = solve_assignment(&s).unwrap();
        assert_eq!(got, want);
        let gv: f64 = got.iter().enumerate().map(|(i, &j)| s[[i, j]]).sum();
        assert!((gv - val).abs() < 1e-12);
    }

    #[test]
    fn rejects_rectangular() {
        assert!(solve_assignment(&Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn one_dimensional_rearrangement_sorts() {
        let g = Arc::new(QuantileGrid::new(3, 1).unwrap());
        let q = DiscreteCvqf::new(g, array![[3.0], [1.0], [2.0]], None).unwrap();
        let r = rearrange(&q).unwrap();
        assert_eq!(r.values().column(0).to_vec(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn identity_cvqf_is_unchanged() {
        let g = Arc::new(QuantileGrid::new(4, 2).unwrap());
        let q = DiscreteCvqf::new(g.clone(), g.levels().clone(), None).unwrap();
        assert_eq!(rearrange(&q).unwrap(), q);
    }
}
