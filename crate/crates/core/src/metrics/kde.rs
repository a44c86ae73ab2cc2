//! Gaussian kernel density estimates on a regular bin lattice.
//!
//! The isotropic kernel factorises over axes, so in two dimensions the density
//! is `K₁ᵀ K₂` with `K_a[m, b] = exp(-(c_b - y_ma)² / 2σ²)`.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KdeGrid {
    pub bins: usize,
    pub sigma: f64,
    /// `(low, high)` per axis.
    pub bounds: Vec<(f64, f64)>,
    /// `bins^d` cells, last axis fastest, summing to 1.
    pub density: Vec<f64>,
}

fn check(samples: ArrayView2<'_, f64>, bins: usize, sigma: f64) -> Result<()> {
    let d = samples.ncols();
    if !(1..=2).contains(&d) {
        return Err(Error::Unsupported(format!("kde supports d = 1 or 2, got d = {d}")));
    }
    if samples.nrows() == 0 {
        return Err(Error::InvalidArgument("kde of an empty sample".into()));
    }
    if !(sigma > 0.0) || bins == 0 {
        return Err(Error::InvalidArgument(format!("kde needs sigma > 0 and bins > 0 (sigma {sigma}, bins {bins})")));
    }
    Ok(())
}

fn centres(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let h = (hi - lo) / bins as f64;
    (0..bins).map(|b| lo + (b as f64 + 0.5) * h).collect()
}

fn axis_kernel(samples: ArrayView2<'_, f64>, axis: usize, c: &[f64], sigma: f64) -> Array2<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    Array2::from_shape_fn((samples.nrows(), c.len()), |(m, b)| {
        let t = c[b] - samples[[m, axis]];
        (-t * t * inv).exp()
    })
}

pub fn kde(samples: ArrayView2<'_, f64>, bins: usize, sigma: f64, bounds: &[(f64, f64)]) -> Result<KdeGrid> {
    check(samples, bins, sigma)?;
    let d = samples.ncols();
    if bounds.len() != d {
        return Err(Error::Shape(format!("{} bounds for d = {d}", bounds.len())));
    }
    let axes: Vec<Vec<f64>> = bounds.iter().map(|&(lo, hi)| centres(lo, hi, bins)).collect();
    let mut density = if d == 1 {
        axis_kernel(samples, 0, &axes[0], sigma).sum_axis(ndarray::Axis(0)).to_vec()
    } else {
        let k1 = axis_kernel(samples, 0, &axes[0], sigma);
        let k2 = axis_kernel(samples, 1, &axes[1], sigma);
        k1.t().dot(&k2).into_iter().collect()
    };
    let total: f64 = density.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric {
            iteration: 0,
            message: "kde mass vanished on the bin lattice".into(),
        });
    }
    density.iter_mut().for_each(|v| *v /= total);
    Ok(KdeGrid {
        bins,
        sigma,
        bounds: bounds.to_vec(),
        density,
    })
}

/// Per-axis range of both sample sets, padded by `3σ`.
pub fn shared_bounds(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, sigma: f64) -> Vec<(f64, f64)> {
    (0..a.ncols())
        .map(|c| {
            let (lo, hi) = a
                .column(c)
                .iter()
                .chain(b.column(c).iter())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            (lo - 3.0 * sigma, hi + 3.0 * sigma)
        })
        .collect()
}

/// `Σ |f_a - f_b|` over the bins of two KDEs on shared bounds; lies in `[0, 2]`.
pub fn kde_l1(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, bins: usize, sigma: f64) -> Result<f64> {
    check(a, bins, sigma)?;
    check(b, bins, sigma)?;
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("sample dims {} and {} differ", a.ncols(), b.ncols())));
    }
    let bounds = shared_bounds(a, b, sigma);
    let fa = kde(a, bins, sigma, &bounds)?;
    let fb = kde(b, bins, sigma, &bounds)?;
    Ok(fa.density.iter().zip(&fb.density).map(|(x, y)| (x - y).abs()).sum())
}

/// Local maxima of a 1d density whose prominence exceeds `min_prominence`
/// times the global maximum. Returns bin indices.
pub fn density_peaks(density: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = density.len();
    let top = density.iter().copied().fold(0.0, f64::max);
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        // treat plateaus as one candidate
        let mut j = i;
        while j + 1 < n && density[j + 1] == density[i] {
            j += 1;
        }
        let left_lower = i == 0 || density[i - 1] < density[i];
        let right_lower = j + 1 == n || density[j + 1] < density[i];
        if left_lower && right_lower && density[i] > 0.0 {
            let h = density[i];
            let mut left_min = h;
            let mut k = i;
            while k > 0 && density[k - 1] <= h {
                k -= 1;
                left_min = left_min.min(density[k]);
            }
            let mut right_min = h;
            let mut k = j;
            while k + 1 < n && density[k + 1] <= h {
                k += 1;
                right_min = right_min.min(density[k]);
            }
            let prominence = h - left_min.max(right_min);
            if prominence >= min_prominence * top {
                peaks.push((i + j) / 2);
            }
        }
        i = j + 1;
    }
    peaks
}
