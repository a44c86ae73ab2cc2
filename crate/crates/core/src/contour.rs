//! α-contours: the image under a CVQF of the boundary of the level box
//! `[α, 1-α]^d`, with α snapped onto the grid.

use ndarray::Array2;

use crate::cvqf::DiscreteCvqf;
use crate::error::{Error, Result};
use crate::grid::QuantileGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct ContourSpec {
    /// The α that was asked for.
    pub alpha: f64,
    /// α moved onto the nearest multiple of `1/T`; both it and `1 - α` are grid levels.
    pub snapped_alpha: f64,
    /// Rows of the grid belonging to `U_α`, ascending.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Contour {
    pub spec: ContourSpec,
    /// CVQF values at `spec.indices`, one point per row.
    pub points: Array2<f64>,
}

/// Integer level (1-based) of α on a grid with `t` levels per axis.
/// Nearest multiple of `1/T`, ties toward the smaller level, never below `1/T`.
pub fn snap_alpha(alpha: f64, t: usize) -> usize {
    let scaled = alpha * t as f64;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let m = if (frac - 0.5).abs() < 1e-9 || frac < 0.5 {
        floor as usize
    } else {
        floor as usize + 1
    };
    m.clamp(1, t.div_ceil(2).max(1))
}

/// Grid rows of `U_α`. For `d = 1` this is the pair of interval endpoints.
pub fn contour_indices(grid: &QuantileGrid, alpha: f64) -> Result<ContourSpec> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    let t = grid.t();
    let m = snap_alpha(alpha, t);
    // zero-based coordinates of the levels m/T and 1 - m/T
    let lo = m - 1;
    let hi = t - m - 1;
    let (lo, hi) = (lo.min(hi), lo.max(hi));
    let d = grid.dim();
    let on_edge = |c: usize| c == lo || c == hi;
    let inside = |c: usize| (lo..=hi).contains(&c);

    let mut indices = Vec::new();
    for row in 0..grid.len() {
        let coords = grid.multi_index(row);
        let member = if d == 1 {
            on_edge(coords[0])
        } else {
            (0..d).any(|axis| {
                inside(coords[axis])
                    && coords
                        .iter()
                        .enumerate()
                        .all(|(other, &c)| other == axis || on_edge(c))
            })
        };
        if member {
            indices.push(row);
        }
    }
    Ok(ContourSpec {
        alpha,
        snapped_alpha: m as f64 / t as f64,
        indices,
    })
}

pub fn alpha_contour(cvqf: &DiscreteCvqf, alpha: f64) -> Result<Contour> {
    let spec = contour_indices(cvqf.grid(), alpha)?;
    let d = cvqf.grid().dim();
    let mut points = Array2::zeros((spec.indices.len(), d));
    for (k, &row) in spec.indices.iter().enumerate() {
        points.row_mut(k).assign(&cvqf.quantile(row));
    }
    Ok(Contour { spec, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn identity(t: usize, d: usize) -> DiscreteCvqf {
        let g = Arc::new(QuantileGrid::new(t, d).unwrap());
        DiscreteCvqf::new(g.clone(), g.levels().clone(), None).unwrap()
    }

    #[test]
    fn one_dimensional_endpoints() {
        let c = alpha_contour(&identity(4, 1), 0.25).unwrap();
        assert_eq!(c.spec.indices, vec![0, 2]);
        assert_eq!(c.points.column(0).to_vec(), vec![0.25, 0.75]);
    }

    #[test]
    fn two_dimensional_ring_by_enumeration() {
        let q = identity(4, 2);
        let c = alpha_contour(&q, 0.25).unwrap();
        // brute-force U_α from its definition
        let mut want = Vec::new();
        for (row, u) in q.grid().levels().rows().into_iter().enumerate() {
            let edge = |v: f64| (v - 0.25).abs() < 1e-12 || (v - 0.75).abs() < 1e-12;
            let within = |v: f64| (0.25 - 1e-12..=0.75 + 1e-12).contains(&v);
            if (within(u[0]) && edge(u[1])) || (within(u[1]) && edge(u[0])) {
                want.push(row);
            }
        }
        assert_eq!(want.len(), 8);
        assert_eq!(c.spec.indices, want);
    }

    #[test]
    fn snapping_rules() {
        assert_eq!(snap_alpha(0.25, 4), 1);
        assert_eq!(snap_alpha(0.05, 50), 2); // 2.5 ties toward smaller
        assert_eq!(snap_alpha(0.25, 50), 12); // 12.5 ties toward smaller
        assert_eq!(snap_alpha(0.1, 50), 5);
        assert_eq!(snap_alpha(0.07, 50), 3); // 3.5 ties toward smaller
        assert_eq!(snap_alpha(0.001, 10), 1);
    }

    #[test]
    fn rejects_alpha_out_of_range() {
        let q = identity(4, 2);
        assert!(alpha_contour(&q, 0.0).is_err());
        assert!(alpha_contour(&q, 0.5).is_err());
        assert!(alpha_contour(&q, -0.1).is_err());
    }

    #[test]
    fn contour_sizes() {
        for t in [3, 5, 10, 20] {
            let q2 = identity(t, 2);
            for alpha in [0.05, 0.1, 0.2, 0.3, 0.45] {
                let n = alpha_contour(&q2, alpha).unwrap().spec.indices.len();
                assert!(n <= 4 * t - 4, "t={t} alpha={alpha} n={n}");
            }
            assert_eq!(alpha_contour(&identity(t, 1), 0.2).unwrap().spec.indices.len(), 2);
        }
    }

    #[test]
    fn offaxis_coordinates_on_snapped_levels() {
        let q = identity(10, 3);
        let c = alpha_contour(&q, 0.2).unwrap();
        let a = c.spec.snapped_alpha;
        for &row in &c.spec.indices {
            let u = q.grid().level(row);
            let edges = u.iter().filter(|v| (*v - a).abs() < 1e-12 || (*v - (1.0 - a)).abs() < 1e-12).count();
            assert!(edges >= 2);
            assert!(u.iter().all(|v| *v >= a - 1e-12 && *v <= 1.0 - a + 1e-12));
        }
    }
}
