//! Evaluation metrics: density distance, quantile-function distance,
//! inverse-CVQF entropy, co-monotonicity violations, and confidence-set
//! coverage, size and calibration.

mod coverage;
mod geometry;
mod kde;
mod report;

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cvqf::{comonotone_product, nearest_row, DiscreteCvqf};
use crate::data::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::grid::QuantileGrid;
use crate::solver::{evaluate_cvqf, fit_linear_vqr, CvqfDecoder, SolverConfig};

pub use coverage::{
    alpha_candidates, calibrate_alpha, confidence_set, coverage_curve, marginal_coverage, Calibration, CoverageStats,
};
pub use geometry::{convex_hull_area, hull_contains, point_in_polygon, polygon_area, Hull};
pub use kde::{density_peaks, kde, kde_l1, shared_bounds, KdeGrid, DEFAULT_BINS};
pub use report::{conditioning_values, evaluate_model, EvalOptions, GroundTruth, MetricReport, ReportMeta};

/// Fraction of ordered level pairs `(i, j)` with `(u_i - u_j)ᵀ(Q_i - Q_j) < 0`,
/// out of all `T^{2d}` pairs (diagonal included).
pub fn monotonicity_violations(cvqf: &DiscreteCvqf) -> f64 {
    let levels = cvqf.grid().levels();
    let values = cvqf.values();
    let n = levels.nrows();
    let mut bad = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if comonotone_product(levels, values, i, j) < 0.0 {
                bad += 2;
            }
        }
    }
    bad as f64 / (n as f64 * n as f64)
}

/// `‖Q* - Q̂‖_F / ‖Q*‖_F` over all grid rows.
pub fn qfd(estimated: &DiscreteCvqf, reference: &DiscreteCvqf) -> Result<f64> {
    if estimated.values().dim() != reference.values().dim() {
        return Err(shape_err(format!(
            "estimate is {:?}, reference {:?}",
            estimated.values().dim(),
            reference.values().dim()
        )));
    }
    let denom = reference.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("reference quantile function has zero norm".into()));
    }
    let num = (estimated.values() - reference.values()).iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(num / denom)
}

/// Unconditional VQF fitted on ground-truth samples; the proxy truth for [`qfd`].
pub fn fit_proxy_vqf(samples: ArrayView2<'_, f64>, grid: &Arc<QuantileGrid>, config: &SolverConfig) -> Result<DiscreteCvqf> {
    let ds = Dataset::unconditional(samples.to_owned(), config.seed, "proxy")?;
    let cfg = config.clamped_to(ds.len(), grid.len());
    let fit = fit_linear_vqr(&ds, grid, &cfg)?;
    evaluate_cvqf(&fit.solution, &[], grid, CvqfDecoder::Barycentric)
}

fn normalized_entropy(counts: &[usize], levels: usize) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 || levels <= 1 {
        return 0.0;
    }
    let t = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.ln()
        })
        .sum();
    (h.exp() - 1.0) / (levels as f64 - 1.0)
}

/// Normalised entropy `(e^h - 1) / (T^d - 1)` of the levels hit when inverting
/// each sample through the CVQF, and the same statistic for `M` uniform draws
/// of grid levels (seeded by `seed`).
pub fn inverse_entropy(cvqf: &DiscreteCvqf, samples: ArrayView2<'_, f64>, seed: u64) -> Result<(f64, f64)> {
    let d = cvqf.grid().dim();
    if samples.ncols() != d {
        return Err(shape_err(format!("samples have d={}, cvqf d={d}", samples.ncols())));
    }
    let levels = cvqf.grid().len();
    let mut counts = vec![0usize; levels];
    let mut buf = vec![0.0; d];
    for row in samples.rows() {
        buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
        counts[nearest_row(cvqf.values(), &buf)] += 1;
    }
    let mut reference = vec![0usize; levels];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples.nrows() {
        reference[rng.random_range(0..levels)] += 1;
    }
    Ok((normalized_entropy(&counts, levels), normalized_entropy(&reference, levels)))
}

/// `m` draws of `Q̂(U; x)` with `U` uniform over the grid rows.
pub fn sample_cvqf(cvqf: &DiscreteCvqf, m: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let rows = cvqf.grid().len();
    let d = cvqf.grid().dim();
    let mut out = Array2::zeros((m, d));
    for mut r in out.rows_mut() {
        r.assign(&cvqf.quantile(rng.random_range(0..rows)));
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
    fn identity_has_no_violations() {
        let g = grid(5, 2);
        let q = DiscreteCvqf::new(g.clone(), g.levels().clone(), None).unwrap();
        assert_eq!(monotonicity_violations(&q), 0.0);
    }

    #[test]
    fn reversed_pair_counts_both_orders() {
        let q = DiscreteCvqf::new(grid(2, 1), array![[2.0], [1.0]], None).unwrap();
        assert_eq!(monotonicity_violations(&q), 0.5);
    }

    #[test]
    fn qfd_algebra() {
        let g = grid(2, 1);
        let r = DiscreteCvqf::new(g.clone(), array![[0.6], [0.8]], None).unwrap();
        assert_eq!(qfd(&r, &r).unwrap(), 0.0);
        let twice = r.with_values(r.values() * 2.0).unwrap();
        assert!((qfd(&twice, &r).unwrap() - 1.0).abs() < 1e-15);
        let zero = r.with_values(Array2::zeros((2, 1))).unwrap();
        assert!(qfd(&r, &zero).is_err());
    }

    #[test]
    fn entropy_extremes() {
        let g = grid(4, 1);
        let q = DiscreteCvqf::new(g.clone(), array![[0.0], [1.0], [2.0], [3.0]], None).unwrap();
        let single = Array2::from_elem((10, 1), 1.1);
        assert_eq!(inverse_entropy(&q, single.view(), 0).unwrap().0, 0.0);
        let uniform = array![[0.0], [1.0], [2.0], [3.0], [0.1], [0.9], [2.1], [2.9]];
        assert!((inverse_entropy(&q, uniform.view(), 0).unwrap().0 - 1.0).abs() < 1e-12);
    }
}
