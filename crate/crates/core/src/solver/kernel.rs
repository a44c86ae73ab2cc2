//! Dense kernels for the relaxed dual: the stabilised smooth maximum, the
//! objective with its gradients on a mini-batch, and a streaming pass over all
//! levels and samples that never materialises the `T^d x N` score matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{shape_err, Error, Result};

/// Samples per block of the streaming pass.
const BLOCK_ELEMS: usize = 1 << 15;

/// `ε log Σ exp(v_i / ε)`, shifted by the maximum so that large inputs or a
/// tiny `ε` cannot overflow.
pub fn logsumexp_stable(values: &[f64], epsilon: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("logsumexp of an empty vector".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric {
            iteration: 0,
            message: "non-finite input to logsumexp".into(),
        });
    }
    let sum: f64 = values.iter().map(|v| ((v - max) / epsilon).exp()).sum();
    Ok(max + epsilon * sum.ln())
}

/// Loss and gradients of one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchEval {
    /// Unbiased-up-to-softmax estimate of the full objective.
    pub loss: f64,
    /// One entry per sampled data point.
    pub grad_psi: Array1<f64>,
    /// One row per sampled level.
    pub grad_beta: Array2<f64>,
    /// Gradient with respect to the sampled feature rows, when requested.
    pub grad_features: Option<Array2<f64>>,
}

/// Samples laid out column-major so that a row of scores is a few axpys.
struct Columns {
    n: usize,
    d: usize,
    kp: usize,
    y: Vec<f64>,
    g: Vec<f64>,
    psi: Vec<f64>,
}

impl Columns {
    fn new(y: ArrayView2<'_, f64>, features: ArrayView2<'_, f64>, psi: ArrayView1<'_, f64>) -> Self {
        Self {
            n: y.nrows(),
            d: y.ncols(),
            kp: features.ncols(),
            y: y.t().iter().copied().collect(),
            g: features.t().iter().copied().collect(),
            psi: psi.to_vec(),
        }
    }

    fn y_col(&self, c: usize, lo: usize, hi: usize) -> &[f64] {
        &self.y[c * self.n + lo..c * self.n + hi]
    }

    fn g_col(&self, c: usize, lo: usize, hi: usize) -> &[f64] {
        &self.g[c * self.n + lo..c * self.n + hi]
    }

    /// `out[j - lo] = u_iᵀy_j - β_iᵀg_j - ψ_j` for `j` in `lo..hi`.
    fn scores_into(&self, u_i: ArrayView1<'_, f64>, beta_i: ArrayView1<'_, f64>, lo: usize, hi: usize, out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.psi[lo..hi]) {
            *o = -p;
        }
        for c in 0..self.d {
            let a = u_i[c];
            for (o, v) in out.iter_mut().zip(self.y_col(c, lo, hi)) {
                *o += a * v;
            }
        }
        for c in 0..self.kp {
            let b = beta_i[c];
            for (o, v) in out.iter_mut().zip(self.g_col(c, lo, hi)) {
                *o -= b * v;
            }
        }
    }
}

/// Reductions with eight independent accumulators; a single running value
/// serialises on the floating point add latency.
const LANES: usize = 8;

fn lane_max(values: &[f64]) -> f64 {
    let mut acc = [f64::NEG_INFINITY; LANES];
    let chunks = values.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            // NaN compares false and is skipped here, then caught by the finite sum checks
            acc[l] = if c[l] > acc[l] { c[l] } else { acc[l] };
        }
    }
    tail.iter().chain(acc.iter()).copied().fold(f64::NEG_INFINITY, f64::max)
}

fn lane_sum(values: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let chunks = values.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            acc[l] += c[l];
        }
    }
    acc.iter().sum::<f64>() + tail.iter().sum::<f64>()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn finite_max(values: &[f64], what: &str) -> Result<f64> {
    let max = lane_max(values);
    if max.is_finite() {
        Ok(max)
    } else {
        Err(Error::Numeric {
            iteration: 0,
            message: format!("non-finite score in {what}"),
        })
    }
}

/// `e^x` for `x <= 0`, accurate to a few ulp and written without branches so
/// the loops below vectorise. Arguments below -708 return about 3e-308
/// instead of a subnormal or zero, which is invisible next to the `e^0 = 1`
/// term every shifted row contains.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    // 1.5 * 2^52: adding it rounds to an integer held in the low mantissa bits
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = x.max(-708.0);
    let t = x * LOG2E + SHIFTER;
    let k = t - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor polynomial of degree 13 on |r| <= ln2 / 2
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let ki = t.to_bits().wrapping_sub(SHIFTER.to_bits());
    let scale = f64::from_bits(ki.wrapping_add(1023) << 52);
    p * scale
}

/// Replace `values` by `exp((v - max) / ε)` and return their sum.
fn exp_shifted(values: &mut [f64], max: f64, epsilon: f64) -> f64 {
    let inv = 1.0 / epsilon;
    for v in values.iter_mut() {
        *v = exp_nonpositive((*v - max) * inv);
    }
    lane_sum(values)
}

/// Relaxed dual objective restricted to sampled levels `u` (rows of the grid)
/// and sampled data (`y`, `features`, `psi` rows), with both marginals
/// renormalised to sum to one over the batch. `n_total` is the full sample
/// count, used only to put the loss on the scale of the full objective.
///
/// When the batch is the whole problem this is the exact objective and its
/// exact gradient.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    u: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    features: ArrayView2<'_, f64>,
    beta: ArrayView2<'_, f64>,
    psi: ArrayView1<'_, f64>,
    epsilon: f64,
    n_total: usize,
    want_feature_grad: bool,
) -> Result<BatchEval> {
    let bt = u.nrows();
    let bn = y.nrows();
    check_shapes(u, y, features, beta, psi)?;
    if bt == 0 || bn == 0 {
        return Err(shape_err("empty batch"));
    }
    let mu = 1.0 / bt as f64;
    let nu = 1.0 / bn as f64;
    let kp = features.ncols();
    let cols = Columns::new(y, features, psi);

    let mut row = vec![0.0; bn];
    let mut col_mass = vec![0.0; bn];
    // column-major (kp x bn) accumulator of Σ_i w_ij β_i
    let mut wb = vec![0.0; if want_feature_grad { kp * bn } else { 0 }];
    let mut grad_beta = Array2::zeros((bt, kp));
    let mut lse_sum = 0.0;
    let gbar: Vec<f64> = (0..kp).map(|c| cols.g_col(c, 0, bn).iter().sum::<f64>() * nu).collect();

    for i in 0..bt {
        cols.scores_into(u.row(i), beta.row(i), 0, bn, &mut row);
        let max = finite_max(&row, "mini-batch")?;
        let sum = exp_shifted(&mut row, max, epsilon);
        lse_sum += max + epsilon * sum.ln();
        let inv = 1.0 / sum;
        for (m, w) in col_mass.iter_mut().zip(&row) {
            *m += w * inv;
        }
        for c in 0..kp {
            grad_beta[[i, c]] = mu * (gbar[c] - inv * dot(&row, cols.g_col(c, 0, bn)));
            if want_feature_grad {
                let b = beta[[i, c]] * inv;
                for (acc, w) in wb[c * bn..(c + 1) * bn].iter_mut().zip(&row) {
                    *acc += b * w;
                }
            }
        }
    }

    let mut loss = psi.sum() * nu + mu * lse_sum + epsilon * (n_total as f64 / bn as f64).ln();
    for i in 0..bt {
        for c in 0..kp {
            loss += mu * beta[[i, c]] * gbar[c];
        }
    }
    let grad_psi = Array1::from_iter(col_mass.iter().map(|c| nu - mu * c));

    let grad_features = want_feature_grad.then(|| {
        let beta_sum = beta.sum_axis(Axis(0)) * (mu * nu);
        Array2::from_shape_fn((bn, kp), |(j, c)| beta_sum[c] - mu * wb[c * bn + j])
    });
    if !loss.is_finite() {
        return Err(Error::Numeric {
            iteration: 0,
            message: "non-finite mini-batch loss".into(),
        });
    }
    Ok(BatchEval {
        loss,
        grad_psi,
        grad_beta,
        grad_features,
    })
}

fn check_shapes(
    u: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    features: ArrayView2<'_, f64>,
    beta: ArrayView2<'_, f64>,
    psi: ArrayView1<'_, f64>,
) -> Result<()> {
    if u.ncols() != y.ncols() {
        return Err(shape_err(format!("levels have d={}, targets d={}", u.ncols(), y.ncols())));
    }
    if features.nrows() != y.nrows() || psi.len() != y.nrows() {
        return Err(shape_err(format!(
            "{} targets, {} feature rows, {} psi entries",
            y.nrows(),
            features.nrows(),
            psi.len()
        )));
    }
    if beta.nrows() != u.nrows() || beta.ncols() != features.ncols() {
        return Err(shape_err(format!(
            "beta is {:?}, expected ({}, {})",
            beta.dim(),
            u.nrows(),
            features.ncols()
        )));
    }
    Ok(())
}

/// `S = U Yᵀ - B Gᵀ - 1 ψᵀ`, materialised; reference for the fused kernels.
#[cfg(test)]
fn scores(
    u: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    features: ArrayView2<'_, f64>,
    beta: ArrayView2<'_, f64>,
    psi: ArrayView1<'_, f64>,
) -> Array2<f64> {
    let mut s = u.dot(&y.t());
    if features.ncols() > 0 {
        s -= &beta.dot(&features.t());
    }
    s -= &psi.insert_axis(Axis(0));
    s
}

/// Per-level smooth maxima over all samples and, optionally, the softmax
/// barycentres `Σ_j w_ij y_j` and `Σ_j w_ij g_j`.
#[derive(Debug, Clone)]
pub struct FullPass {
    /// `ε log Σ_j exp(S_ij / ε)` for every level.
    pub lse: Array1<f64>,
    pub y_bar: Option<Array2<f64>>,
    pub g_bar: Option<Array2<f64>>,
}

/// Streams over blocks of samples with online rescaling, so the working
/// memory beyond the inputs is one block.
pub fn full_pass(
    levels: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    features: ArrayView2<'_, f64>,
    beta: ArrayView2<'_, f64>,
    psi: ArrayView1<'_, f64>,
    epsilon: f64,
    barycentres: bool,
) -> Result<FullPass> {
    full_pass_blocked(levels, y, features, beta, psi, epsilon, barycentres, BLOCK_ELEMS)
}

#[allow(clippy::too_many_arguments)]
fn full_pass_blocked(
    levels: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    features: ArrayView2<'_, f64>,
    beta: ArrayView2<'_, f64>,
    psi: ArrayView1<'_, f64>,
    epsilon: f64,
    barycentres: bool,
    block: usize,
) -> Result<FullPass> {
    check_shapes(levels, y, features, beta, psi)?;
    let rows = levels.nrows();
    let n = y.nrows();
    let d = y.ncols();
    let kp = features.ncols();
    let cols = Columns::new(y, features, psi);
    let block = block.clamp(1, n.max(1));
    let mut buf = vec![0.0; block];

    let mut lse = Array1::zeros(rows);
    let mut y_bar = barycentres.then(|| Array2::zeros((rows, d)));
    let mut g_bar = barycentres.then(|| Array2::zeros((rows, kp)));
    let mut acc_y = vec![0.0; d];
    let mut acc_g = vec![0.0; kp];

    for i in 0..rows {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        acc_y.iter_mut().for_each(|v| *v = 0.0);
        acc_g.iter_mut().for_each(|v| *v = 0.0);
        let mut lo = 0;
        while lo < n {
            let hi = (lo + block).min(n);
            let out = &mut buf[..hi - lo];
            cols.scores_into(levels.row(i), beta.row(i), lo, hi, out);
            let new_max = max.max(finite_max(out, "full pass")?);
            let rescale = ((max - new_max) / epsilon).exp();
            sum = sum * rescale + exp_shifted(out, new_max, epsilon);
            max = new_max;
            if barycentres {
                for c in 0..d {
                    acc_y[c] = acc_y[c] * rescale + dot(out, cols.y_col(c, lo, hi));
                }
                for c in 0..kp {
                    acc_g[c] = acc_g[c] * rescale + dot(out, cols.g_col(c, lo, hi));
                }
            }
            lo = hi;
        }
        lse[i] = max + epsilon * sum.ln();
        if let (Some(yb), Some(gb)) = (y_bar.as_mut(), g_bar.as_mut()) {
            for c in 0..d {
                yb[[i, c]] = acc_y[c] / sum;
            }
            for c in 0..kp {
                gb[[i, c]] = acc_g[c] / sum;
            }
        }
    }
    if lse.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            iteration: 0,
            message: "non-finite smooth maximum".into(),
        });
    }
    Ok(FullPass { lse, y_bar, g_bar })
}

/// Exact relaxed dual objective over all levels and samples, given
/// precomputed features `g(x_j)` (the raw covariates for linear VQR).
pub fn objective_from_features(
    levels: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    features: ArrayView2<'_, f64>,
    beta: ArrayView2<'_, f64>,
    psi: ArrayView1<'_, f64>,
    epsilon: f64,
) -> Result<f64> {
    let pass = full_pass(levels, y, features, beta, psi, epsilon, false)?;
    let rows = levels.nrows() as f64;
    let mut value = psi.mean().unwrap_or(0.0) + pass.lse.sum() / rows;
    if features.ncols() > 0 {
        let gbar = features.mean_axis(Axis(0)).expect("non-empty features");
        value += beta.dot(&gbar).sum() / rows;
    }
    Ok(value)
}
