//! Exact small-scale reference: the transport LP with mean-independence
//! constraints solved by a dense simplex method, and the monotone coupling
//! that solves the one-dimensional unconditional case by sorting.

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::grid::QuantileGrid;

/// Largest `T^d * N` accepted by [`build_primal_lp`].
pub const MAX_LP_VARIABLES: usize = 2000;

const PIVOT_TOL: f64 = 1e-11;

/// `max cᵀx  s.t.  A x = b, x >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpInstance {
    pub c: Array1<f64>,
    pub a: Array2<f64>,
    pub b: Array1<f64>,
}

impl LpInstance {
    pub fn new(c: Array1<f64>, a: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        if a.ncols() != c.len() || a.nrows() != b.len() {
            return Err(shape_err(format!(
                "A is {:?}, c has {}, b has {}",
                a.dim(),
                c.len(),
                b.len()
            )));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("LP data must be finite".into()));
        }
        Ok(Self { c, a, b })
    }

    pub fn constraint_residual(&self, x: &Array1<f64>) -> f64 {
        (self.a.dot(x) - &self.b).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Variables `Π_ij` at index `i * N + j`. Rows: `T^d` level marginals, `N`
/// sample marginals, then `T^d * k` mean-independence rows
/// `Σ_j Π_ij x_jc = μ_i x̄_c`, ordered by level then covariate.
pub fn build_primal_lp(dataset: &Dataset, grid: &QuantileGrid) -> Result<LpInstance> {
    let (t, n, k) = (grid.len(), dataset.len(), dataset.k());
    if grid.dim() != dataset.d() {
        return Err(shape_err(format!("grid has d={} but targets d={}", grid.dim(), dataset.d())));
    }
    let vars = t.checked_mul(n).filter(|&v| v <= MAX_LP_VARIABLES).ok_or_else(|| {
        Error::Size(format!("T^d * N = {t} * {n} exceeds the oracle limit of {MAX_LP_VARIABLES}"))
    })?;
    let rows = t * (k + 1) + n;
    let mu = 1.0 / t as f64;
    let nu = 1.0 / n as f64;
    let xbar = dataset.x_mean();
    let u = grid.levels();
    let y = dataset.y();
    let x = dataset.x();

    let c = Array1::from_shape_fn(vars, |v| {
        let (i, j) = (v / n, v % n);
        u.row(i).dot(&y.row(j))
    });
    let mut a = Array2::zeros((rows, vars));
    let mut b = Array1::zeros(rows);
    for i in 0..t {
        for j in 0..n {
            let v = i * n + j;
            a[[i, v]] = 1.0;
            a[[t + j, v]] = 1.0;
            for cc in 0..k {
                a[[t + n + i * k + cc, v]] = x[[j, cc]];
            }
        }
        b[i] = mu;
        for cc in 0..k {
            b[t + n + i * k + cc] = mu * xbar[cc];
        }
    }
    for j in 0..n {
        b[t + j] = nu;
    }
    LpInstance::new(c, a, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Array1<f64>,
    pub value: f64,
    /// Constraint rows removed as linearly dependent.
    pub dropped_rows: Vec<usize>,
}

/// Indices of a maximal linearly independent subset of the rows of `[A | b]`,
/// or an infeasibility error if a dependent row contradicts the others.
fn independent_rows(a: &Array2<f64>, b: &Array1<f64>) -> Result<(Vec<usize>, Vec<usize>)> {
    let (m, n) = a.dim();
    let scale = 1.0 + a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let tol = 1e-9 * scale;
    // eliminate on a copy, tracking which original row survives in each slot
    let mut work: Vec<(usize, Vec<f64>, f64)> = (0..m).map(|r| (r, a.row(r).to_vec(), b[r])).collect();
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    let mut col = 0;
    let mut start = 0;
    while start < work.len() && col < n {
        let pivot = (start..work.len()).max_by(|&p, &q| work[p].1[col].abs().total_cmp(&work[q].1[col].abs()));
        let Some(p) = pivot else { break };
        if work[p].1[col].abs() <= tol {
            col += 1;
            continue;
        }
        work.swap(start, p);
        let (prow, pvec, pb) = work[start].clone();
        keep.push(prow);
        for r in start + 1..work.len() {
            let f = work[r].1[col] / pvec[col];
            if f != 0.0 {
                for c in col..n {
                    work[r].1[c] -= f * pvec[c];
                }
                work[r].2 -= f * pb;
            }
        }
        start += 1;
        col += 1;
    }
    for (r, _, rhs) in &work[start..] {
        if rhs.abs() > 1e-9 * (1.0 + b.iter().fold(0.0f64, |s, v| s.max(v.abs()))) {
            return Err(Error::Infeasible);
        }
        dropped.push(*r);
    }
    keep.sort_unstable();
    dropped.sort_unstable();
    Ok((keep, dropped))
}

struct Tableau {
    /// `m x (cols + 1)`; the last column is the right-hand side.
    t: Array2<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.t.ncols();
        let p = self.t[[row, col]];
        for c in 0..width {
            self.t[[row, c]] /= p;
        }
        let prow = self.t.row(row).to_owned();
        for r in 0..self.t.nrows() {
            if r != row {
                let f = self.t[[r, col]];
                if f != 0.0 {
                    self.t.row_mut(r).scaled_add(-f, &prow);
                }
            }
        }
        self.basis[row] = col;
    }

    /// Minimise `cost · x` over the columns `allowed` with Bland's rule.
    fn minimise(&mut self, cost: &[f64], allowed: usize) -> Result<()> {
        let m = self.t.nrows();
        let rhs = self.t.ncols() - 1;
        loop {
            // reduced costs r_j = c_j - c_Bᵀ B⁻¹ a_j; enter the first negative one
            let mut enter = None;
            for j in 0..allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut r = cost[j];
                for (row, &bj) in self.basis.iter().enumerate() {
                    r -= cost[bj] * self.t[[row, j]];
                }
                if r < -PIVOT_TOL {
                    enter = Some(j);
                    break;
                }
            }
            let Some(col) = enter else { return Ok(()) };
            // minimum ratio; ties to the smallest basic index
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let a = self.t[[r, col]];
                if a > PIVOT_TOL {
                    let ratio = self.t[[r, rhs]] / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lv)) => {
                            if ratio < lv - 1e-14 || ((ratio - lv).abs() <= 1e-14 && self.basis[r] < self.basis[lr]) {
                                Some((r, ratio))
                            } else {
                                Some((lr, lv))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else { return Err(Error::Unbounded) };
            self.pivot(row, col);
        }
    }
}

/// Two-phase dense simplex with Bland's anti-cycling rule. Dependent rows are
/// removed first by Gaussian elimination.
pub fn solve_lp_exact(instance: &LpInstance) -> Result<LpSolution> {
    let (keep, dropped_rows) = independent_rows(&instance.a, &instance.b)?;
    let n = instance.c.len();
    let m = keep.len();
    let width = n + m + 1;
    let mut t = Array2::zeros((m, width));
    for (r, &orig) in keep.iter().enumerate() {
        let sign = if instance.b[orig] < 0.0 { -1.0 } else { 1.0 };
        for c in 0..n {
            t[[r, c]] = sign * instance.a[[orig, c]];
        }
        t[[r, n + r]] = 1.0;
        t[[r, width - 1]] = sign * instance.b[orig];
    }
    let mut tab = Tableau {
        t,
        basis: (n..n + m).collect(),
    };

    let mut phase1 = vec![0.0; n + m];
    phase1[n..].iter_mut().for_each(|v| *v = 1.0);
    tab.minimise(&phase1, n + m)?;
    let infeas: f64 = tab
        .basis
        .iter()
        .enumerate()
        .filter(|(_, &bj)| bj >= n)
        .map(|(r, _)| tab.t[[r, width - 1]])
        .sum();
    if infeas > 1e-9 {
        return Err(Error::Infeasible);
    }
    // drive remaining artificial variables (at zero) out of the basis
    for r in 0..m {
        if tab.basis[r] >= n {
            if let Some(c) = (0..n).find(|&c| tab.t[[r, c]].abs() > 1e-9 && !tab.basis.contains(&c)) {
                tab.pivot(r, c);
            }
        }
    }

    let mut phase2 = vec![0.0; n + m];
    for j in 0..n {
        phase2[j] = -instance.c[j];
    }
    // artificials may not re-enter
    tab.minimise(&phase2, n)?;

    let mut x = Array1::zeros(n);
    for (r, &bj) in tab.basis.iter().enumerate() {
        if bj < n {
            x[bj] = tab.t[[r, width - 1]].max(0.0);
        }
    }
    let value = instance.c.dot(&x);
    Ok(LpSolution { x, value, dropped_rows })
}

/// Reshape an LP solution of [`build_primal_lp`] into the `T^d x N` plan.
pub fn plan_from_solution(sol: &LpSolution, levels: usize, n: usize) -> Result<Array2<f64>> {
    Array2::from_shape_vec((levels, n), sol.x.to_vec()).map_err(|e| shape_err(e.to_string()))
}

/// Monotone (north-west corner) coupling between `T` equally weighted levels
/// and the samples `y` sorted ascending; columns stay in the input order.
pub fn sorting_coupling(y: &[f64], t: usize) -> Result<Array2<f64>> {
    if y.is_empty() || t == 0 {
        return Err(Error::InvalidArgument("sorting coupling needs samples and levels".into()));
    }
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut plan = Array2::zeros((t, n));
    let (mu, nu) = (1.0 / t as f64, 1.0 / n as f64);
    let (mut i, mut jpos) = (0usize, 0usize);
    let (mut row_left, mut col_left) = (mu, nu);
    while i < t && jpos < n {
        let mass = row_left.min(col_left);
        plan[[i, order[jpos]]] += mass;
        row_left -= mass;
        col_left -= mass;
        if row_left <= 1e-15 {
            i += 1;
            row_left = mu;
        }
        if col_left <= 1e-15 {
            jpos += 1;
            col_left = nu;
        }
    }
    Ok(plan)
}

/// `Q_i = Σ_j Π_ij y_j / Σ_j Π_ij`: the barycentric pairing of a plan.
pub fn plan_barycentres(plan: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
    if plan.ncols() != y.nrows() {
        return Err(shape_err(format!("plan has {} columns for {} samples", plan.ncols(), y.nrows())));
    }
    let mass = plan.sum_axis(ndarray::Axis(1));
    let mut q = plan.dot(y);
    for (mut row, m) in q.rows_mut().into_iter().zip(mass.iter()) {
        if *m > 0.0 {
            row /= *m;
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn counts_rows_and_variables() {
        let ds = Dataset::unconditional(array![[0.1], [0.7]], 0, "a").unwrap();
        let lp = build_primal_lp(&ds, &QuantileGrid::new(2, 1).unwrap()).unwrap();
        assert_eq!(lp.a.dim(), (4, 4));
        let ds = Dataset::new(array![[0.1], [0.5], [0.9]], array![[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]], 0, "b").unwrap();
        let lp = build_primal_lp(&ds, &QuantileGrid::new(2, 2).unwrap()).unwrap();
        assert_eq!(lp.a.dim(), (11, 12));
    }

    #[test]
    fn size_guard() {
        let ds = Dataset::unconditional(Array2::zeros((300, 1)), 0, "big").unwrap();
        assert!(matches!(build_primal_lp(&ds, &QuantileGrid::new(10, 1).unwrap()), Err(Error::Size(_))));
    }

    #[test]
    fn textbook_lp() {
        // max 3x + 2y  s.t. x + y + s1 = 4, x + 3y + s2 = 6
        let lp = LpInstance::new(
            array![3.0, 2.0, 0.0, 0.0],
            array![[1.0, 1.0, 1.0, 0.0], [1.0, 3.0, 0.0, 1.0]],
            array![4.0, 6.0],
        )
        .unwrap();
        let s = solve_lp_exact(&lp).unwrap();
        assert!((s.value - 12.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let inf = LpInstance::new(array![1.0, 1.0], array![[1.0, 1.0]], array![-1.0]).unwrap();
        assert!(matches!(solve_lp_exact(&inf), Err(Error::Infeasible)));
        let unb = LpInstance::new(array![1.0, 0.0], array![[1.0, -1.0]], array![1.0]).unwrap();
        assert!(matches!(solve_lp_exact(&unb), Err(Error::Unbounded)));
        let contradictory = LpInstance::new(array![1.0], array![[1.0], [2.0]], array![1.0, 3.0]).unwrap();
        assert!(matches!(solve_lp_exact(&contradictory), Err(Error::Infeasible)));
    }

    #[test]
    fn single_sample_plan_is_the_level_marginal() {
        let ds = Dataset::unconditional(array![[0.4, 0.9]], 0, "one").unwrap();
        let grid = QuantileGrid::new(2, 2).unwrap();
        let lp = build_primal_lp(&ds, &grid).unwrap();
        let s = solve_lp_exact(&lp).unwrap();
        assert!(s.x.iter().all(|v| (v - 0.25).abs() < 1e-12));
        let want: f64 = grid.levels().rows().into_iter().map(|u| 0.25 * (0.4 * u[0] + 0.9 * u[1])).sum();
        assert!((s.value - want).abs() < 1e-12);
    }

    #[test]
    fn sorting_coupling_marginals() {
        let y = [0.3, -1.0, 2.0, 0.1, 0.5];
        let p = sorting_coupling(&y, 3).unwrap();
        for r in p.rows() {
            assert!((r.sum() - 1.0 / 3.0).abs() < 1e-12);
        }
        for c in p.columns() {
            assert!((c.sum() - 0.2).abs() < 1e-12);
        }
        // the smallest sample goes entirely to the first level
        assert!((p[[0, 1]] - 0.2).abs() < 1e-12);
    }
}
