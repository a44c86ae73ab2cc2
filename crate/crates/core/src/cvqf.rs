//! Discrete conditional vector quantile functions and the operations that build
//! or query them: decoding a potential by finite differences, vector-rank
//! inversion and separable composition.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{shape_err, Error, Result};
use crate::grid::QuantileGrid;

/// `Q̂(u_i; x)` tabulated on every row of a quantile grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCvqf {
    grid: Arc<QuantileGrid>,
    values: Array2<f64>,
    x: Option<Vec<f64>>,
}

impl DiscreteCvqf {
    pub fn new(grid: Arc<QuantileGrid>, values: Array2<f64>, x: Option<Vec<f64>>) -> Result<Self> {
        if values.dim() != (grid.len(), grid.dim()) {
            return Err(shape_err(format!(
                "cvqf values are {:?}, grid needs ({}, {})",
                values.dim(),
                grid.len(),
                grid.dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cvqf values must be finite".into()));
        }
        Ok(Self { grid, values, x })
    }

    pub fn grid(&self) -> &QuantileGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<QuantileGrid> {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn x(&self) -> Option<&[f64]> {
        self.x.as_deref()
    }

    pub fn quantile(&self, row: usize) -> ArrayView1<'_, f64> {
        self.values.row(row)
    }

    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        Self::new(self.grid.clone(), values, self.x.clone())
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

/// Co-monotonicity product `(u_i - u_j)ᵀ(Q_i - Q_j)` for one pair of rows.
pub fn comonotone_product(levels: &Array2<f64>, values: &Array2<f64>, i: usize, j: usize) -> f64 {
    levels
        .row(i)
        .iter()
        .zip(levels.row(j))
        .zip(values.row(i).iter().zip(values.row(j)))
        .map(|((ui, uj), (qi, qj))| (ui - uj) * (qi - qj))
        .sum()
}

/// Discrete gradient of a potential tabulated on the grid.
///
/// Column `m` of row `i` is `T * (f(u_i + e_m / T) - f(u_i))`, switching to the
/// backward difference on rows whose coordinate `m` equals 1. A grid with `T = 1`
/// has no neighbours and decodes to zeros.
pub fn decode_potential(potential: ArrayView1<'_, f64>, grid: &Arc<QuantileGrid>) -> Result<DiscreteCvqf> {
    let values = potential_gradient(potential, grid)?;
    DiscreteCvqf::new(grid.clone(), values, None)
}

pub(crate) fn potential_gradient(potential: ArrayView1<'_, f64>, grid: &QuantileGrid) -> Result<Array2<f64>> {
    if potential.len() != grid.len() {
        return Err(shape_err(format!(
            "potential has {} entries, grid has {} rows",
            potential.len(),
            grid.len()
        )));
    }
    let t = grid.t();
    let mut out = Array2::zeros((grid.len(), grid.dim()));
    if t == 1 {
        return Ok(out);
    }
    let scale = t as f64;
    for axis in 0..grid.dim() {
        let stride = grid.stride(axis);
        for row in 0..grid.len() {
            let g = if grid.coord(row, axis) + 1 < t {
                potential[row + stride] - potential[row]
            } else {
                potential[row] - potential[row - stride]
            };
            out[[row, axis]] = scale * g;
        }
    }
    Ok(out)
}

/// Index of the grid row whose quantile is closest to `y` in Euclidean distance.
/// Ties go to the smallest index.
pub fn invert_cvqf(cvqf: &DiscreteCvqf, y: &[f64]) -> Result<usize> {
    let d = cvqf.grid().dim();
    if y.len() != d {
        return Err(shape_err(format!("point has {} coordinates, cvqf has {d}", y.len())));
    }
    Ok(nearest_row(cvqf.values(), y))
}

pub(crate) fn nearest_row(values: &Array2<f64>, y: &[f64]) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, row) in values.rows().into_iter().enumerate() {
        let dist: f64 = row.iter().zip(y).map(|(q, v)| (q - v) * (q - v)).sum();
        if dist < best_dist {
            best_dist = dist;
            best = i;
        }
    }
    best
}

/// Combine `d` one-dimensional quantile functions into a box-shaped CVQF:
/// row `(u_1, ..., u_d)` maps to `(Q_1(u_1), ..., Q_d(u_d))`.
pub fn separable_cvqf(per_dim: &[DiscreteCvqf]) -> Result<DiscreteCvqf> {
    let first = per_dim
        .first()
        .ok_or_else(|| Error::InvalidArgument("separable_cvqf needs at least one component".into()))?;
    let t = first.grid().t();
    for (m, q) in per_dim.iter().enumerate() {
        if q.grid().dim() != 1 {
            return Err(shape_err(format!("component {m} is {}-dimensional", q.grid().dim())));
        }
        if q.grid().t() != t {
            return Err(shape_err(format!(
                "component {m} has T={}, expected T={t}",
                q.grid().t()
            )));
        }
    }
    let grid = Arc::new(QuantileGrid::new(t, per_dim.len())?);
    let mut values = Array2::zeros((grid.len(), grid.dim()));
    for row in 0..grid.len() {
        for (axis, q) in per_dim.iter().enumerate() {
            values[[row, axis]] = q.values()[[grid.coord(row, axis), 0]];
        }
    }
    DiscreteCvqf::new(grid, values, first.x.clone())
}

/// Evaluate a linear functional of the potential: `Σ_c coeffs[c] * columns[:, c] + offset`.
pub(crate) fn combine_columns(columns: &Array2<f64>, coeffs: &[f64], offset: Option<&Array1<f64>>) -> Array1<f64> {
    let mut out = match offset {
        Some(o) => o.clone(),
        None => Array1::zeros(columns.nrows()),
    };
    for (c, &w) in coeffs.iter().enumerate() {
        out.scaled_add(w, &columns.column(c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn grid(t: usize, d: usize) -> Arc<QuantileGrid> {
        Arc::new(QuantileGrid::new(t, d).unwrap())
    }

    #[test]
    fn identity_potential_decodes_to_one() {
        let g = grid(4, 1);
        let f = array![0.25, 0.5, 0.75, 1.0];
        let q = decode_potential(f.view(), &g).unwrap();
        for v in q.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_potential_decodes_to_zero() {
        let g = grid(4, 1);
        let f = Array1::from_elem(4, 3.7);
        let q = decode_potential(f.view(), &g).unwrap();
        assert!(q.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn quadratic_potential_matches_gradient() {
        let g = grid(3, 2);
        let f: Array1<f64> = g
            .levels()
            .rows()
            .into_iter()
            .map(|u| u[0] * u[0] + 2.0 * u[1])
            .collect();
        let q = decode_potential(f.view(), &g).unwrap();
        for (r, u) in g.levels().rows().into_iter().enumerate() {
            // forward difference of u² has error h = 1/T; backward likewise
            assert!((q.values()[[r, 0]] - 2.0 * u[0]).abs() <= 1.0 / 3.0 + 1e-12);
            assert!((q.values()[[r, 1]] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let g = grid(3, 2);
        let f = Array1::zeros(8);
        assert!(matches!(decode_potential(f.view(), &g), Err(Error::Shape(_))));
    }

    #[test]
    fn single_level_decodes_to_zero() {
        let g = grid(1, 2);
        let q = decode_potential(array![5.0].view(), &g).unwrap();
        assert_eq!(q.values().dim(), (1, 2));
        assert!(q.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn inversion_exact_and_ties() {
        let g = grid(4, 1);
        let mut vals = Array2::zeros((4, 1));
        for (i, v) in [0.0, 1.0, 2.0, 3.0].iter().enumerate() {
            vals[[i, 0]] = *v;
        }
        let q = DiscreteCvqf::new(g.clone(), vals, None).unwrap();
        assert_eq!(invert_cvqf(&q, &[2.0]).unwrap(), 2);
        // equidistant from rows 1 and 2
        assert_eq!(invert_cvqf(&q, &[1.5]).unwrap(), 1);
        assert!(invert_cvqf(&q, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn inversion_tie_picks_smaller_row() {
        let g = grid(4, 2);
        let mut vals = Array2::from_elem((16, 2), 10.0);
        vals[[3, 0]] = 1.0;
        vals[[3, 1]] = 0.0;
        vals[[9, 0]] = -1.0;
        vals[[9, 1]] = 0.0;
        let q = DiscreteCvqf::new(g, vals, None).unwrap();
        assert_eq!(invert_cvqf(&q, &[0.0, 0.0]).unwrap(), 3);
    }

    #[test]
    fn separable_of_identities_is_the_grid() {
        let g1 = grid(5, 1);
        let id = DiscreteCvqf::new(g1.clone(), g1.levels().clone(), None).unwrap();
        let sep = separable_cvqf(&[id.clone(), id]).unwrap();
        assert_eq!(sep.values(), sep.grid().levels());
    }

    #[test]
    fn separable_rejects_mismatched_t() {
        let a = DiscreteCvqf::new(grid(3, 1), Array2::zeros((3, 1)), None).unwrap();
        let b = DiscreteCvqf::new(grid(4, 1), Array2::zeros((4, 1)), None).unwrap();
        assert!(matches!(separable_cvqf(&[a, b]), Err(Error::Shape(_))));
    }

    #[test]
    fn separable_three_dims_matches_lookup() {
        let t = 3;
        let comps: Vec<DiscreteCvqf> = (0..3)
            .map(|m| {
                let vals = Array2::from_shape_fn((t, 1), |(i, _)| (10 * m + i) as f64 * 0.5);
                DiscreteCvqf::new(grid(t, 1), vals, None).unwrap()
            })
            .collect();
        let sep = separable_cvqf(&comps).unwrap();
        for a in 0..t {
            for b in 0..t {
                for c in 0..t {
                    let row = a * 9 + b * 3 + c;
                    let want = [comps[0].values()[[a, 0]], comps[1].values()[[b, 0]], comps[2].values()[[c, 0]]];
                    assert_eq!(sep.quantile(row).to_vec(), want.to_vec());
                }
            }
        }
    }

    #[test]
    fn rejects_non_finite_values() {
        let mut vals = Array2::zeros((3, 1));
        vals[[1, 0]] = f64::NAN;
        assert!(DiscreteCvqf::new(grid(3, 1), vals, None).is_err());
    }
}
