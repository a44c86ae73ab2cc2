//! α-confidence sets: coverage of held-out points, hull area and the
//! calibration of α to a requested coverage.

use ndarray::ArrayView2;

use crate::contour::alpha_contour;
use crate::cvqf::DiscreteCvqf;
use crate::data::Dataset;
use crate::error::{shape_err, Error, Result};

use super::geometry::{convex_hull_area, hull_contains, Hull};

/// Convex hull of the α-contour of a two-dimensional CVQF.
pub fn confidence_set(cvqf: &DiscreteCvqf, alpha: f64) -> Result<Hull> {
    if cvqf.grid().dim() != 2 {
        return Err(Error::Unsupported(format!(
            "confidence sets need d = 2, got d = {}",
            cvqf.grid().dim()
        )));
    }
    let contour = alpha_contour(cvqf, alpha)?;
    let pts: Vec<[f64; 2]> = contour.points.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    Ok(convex_hull_area(&pts))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageStats {
    pub alpha: f64,
    /// Fraction of points inside their confidence set.
    pub coverage: f64,
    /// Mean confidence-set area.
    pub area: f64,
}

/// Coverage and mean area for each α, given one CVQF per test point (or a
/// single CVQF shared by all points).
pub fn coverage_curve(cvqfs: &[DiscreteCvqf], ys: ArrayView2<'_, f64>, alphas: &[f64]) -> Result<Vec<CoverageStats>> {
    if ys.ncols() != 2 {
        return Err(Error::Unsupported("coverage needs d = 2".into()));
    }
    if cvqfs.len() != 1 && cvqfs.len() != ys.nrows() {
        return Err(shape_err(format!("{} cvqfs for {} test points", cvqfs.len(), ys.nrows())));
    }
    if ys.nrows() == 0 {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let shared = if cvqfs.len() == 1 {
            Some(confidence_set(&cvqfs[0], alpha)?)
        } else {
            None
        };
        let mut hits = 0usize;
        let mut area = 0.0;
        for (i, y) in ys.rows().into_iter().enumerate() {
            let own;
            let hull = match &shared {
                Some(h) => h,
                None => {
                    own = confidence_set(&cvqfs[i], alpha)?;
                    &own
                }
            };
            if hull_contains(hull, [y[0], y[1]]) {
                hits += 1;
            }
            area += hull.area;
        }
        let n = ys.nrows() as f64;
        out.push(CoverageStats {
            alpha,
            coverage: hits as f64 / n,
            area: area / n,
        });
    }
    Ok(out)
}

fn provide_all<F>(provider: &F, set: &Dataset) -> Result<Vec<DiscreteCvqf>>
where
    F: Fn(&[f64]) -> Result<DiscreteCvqf>,
{
    if set.k() == 0 {
        return Ok(vec![provider(&[])?]);
    }
    set.x()
        .rows()
        .into_iter()
        .map(|x| provider(&x.to_vec()))
        .collect()
}

/// Fraction of `(x, y)` in `test` whose `y` lies in the α-confidence set of
/// `provider(x)`. Boundary points count as covered.
pub fn marginal_coverage<F>(provider: F, test: &Dataset, alpha: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<DiscreteCvqf>,
{
    let cvqfs = provide_all(&provider, test)?;
    Ok(coverage_curve(&cvqfs, test.y().view(), &[alpha])?[0].coverage)
}

/// Candidate α values `1/T, 2/T, ..., ⌊T/2 - 1⌋/T`.
pub fn alpha_candidates(t: usize) -> Vec<f64> {
    let top = (t / 2).saturating_sub(1).max(1);
    (1..=top).map(|m| m as f64 / t as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub alpha: f64,
    pub coverage: f64,
    pub area: f64,
    /// Every candidate tried, ascending in α.
    pub curve: Vec<CoverageStats>,
}

/// Largest α whose coverage on `calibration` is at least `nominal - tolerance`.
pub fn calibrate_alpha<F>(provider: F, calibration: &Dataset, nominal: f64, tolerance: f64) -> Result<Calibration>
where
    F: Fn(&[f64]) -> Result<DiscreteCvqf>,
{
    if !(0.0..1.0).contains(&nominal) {
        return Err(Error::InvalidArgument(format!("nominal coverage must lie in [0, 1), got {nominal}")));
    }
    let cvqfs = provide_all(&provider, calibration)?;
    let t = cvqfs[0].grid().t();
    let curve = coverage_curve(&cvqfs, calibration.y().view(), &alpha_candidates(t))?;
    calibrate_from_curve(curve, nominal, tolerance)
}

pub(crate) fn calibrate_from_curve(curve: Vec<CoverageStats>, nominal: f64, tolerance: f64) -> Result<Calibration> {
    let target = nominal - tolerance;
    let pick = curve.iter().rev().find(|s| s.coverage >= target).copied();
    match pick {
        Some(s) => Ok(Calibration {
            alpha: s.alpha,
            coverage: s.coverage,
            area: s.area,
            curve,
        }),
        None => {
            let best = curve
                .iter()
                .copied()
                .max_by(|a, b| a.coverage.total_cmp(&b.coverage))
                .expect("non-empty curve");
            Err(Error::Calibration {
                target,
                best_alpha: best.alpha,
                best_coverage: best.coverage,
            })
        }
    }
}
