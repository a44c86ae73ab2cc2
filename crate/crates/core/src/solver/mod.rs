//! Relaxed dual solver for vector quantile regression.
//!
//! The dual variables are `ψ` (one per sample) and `β` (one row per quantile
//! level). For a feature map `g` the objective is
//!
//! ```text
//! ψᵀν + tr(βᵀ Ḡ) + ε Σ_i μ_i log Σ_j exp((u_iᵀy_j - β_iᵀg(x_j) - ψ_j) / ε)
//! ```
//!
//! with uniform `μ = 1/T^d`, `ν = 1/N` and `Ḡ` the mean-independence matrix
//! whose rows all equal `ḡ / T^d`. It is fitted by plain mini-batch SGD with a
//! plateau learning-rate decay.

mod kernel;
mod schedule;

use std::borrow::Cow;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvqf::{combine_columns, potential_gradient, DiscreteCvqf};
use crate::data::Dataset;
use crate::embedding::{embed_backward, embed_forward, Embedding};
use crate::error::{shape_err, Error, Result};
use crate::grid::{GridShape, QuantileGrid};

pub use kernel::{batch_objective, full_pass, logsumexp_stable, objective_from_features, BatchEval, FullPass};
pub use schedule::PlateauSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_patience_iters: usize,
    pub lr_improvement_threshold: f64,
    pub batch_n: usize,
    pub batch_t: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.005,
            iterations: 10_000,
            learning_rate: 1.0,
            lr_decay_factor: 0.9,
            lr_patience_iters: 500,
            lr_improvement_threshold: 0.005,
            batch_n: 1000,
            batch_t: 1000,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("lr_decay_factor must lie in (0, 1], got {}", self.lr_decay_factor));
        }
        if self.lr_patience_iters == 0 {
            return bad("lr_patience_iters must be positive".into());
        }
        if !(self.lr_improvement_threshold >= 0.0 && self.lr_improvement_threshold < 1.0) {
            return bad(format!(
                "lr_improvement_threshold must lie in [0, 1), got {}",
                self.lr_improvement_threshold
            ));
        }
        if self.batch_n == 0 || self.batch_t == 0 {
            return bad("batch sizes must be positive".into());
        }
        Ok(())
    }

    /// Copy with batch sizes clamped to the problem size.
    pub fn clamped_to(&self, n: usize, levels: usize) -> Self {
        Self {
            batch_n: self.batch_n.min(n).max(1),
            batch_t: self.batch_t.min(levels).max(1),
            ..self.clone()
        }
    }
}

/// Step size at the stability edge of the mini-batch objective: the `ψ`
/// block has curvature about `1 / (ε b_N)` and the `β` block about
/// `E|g|² / (ε b_T)`, so `η = ε min(b_N, b_T / E|g|²)`.
pub fn suggested_learning_rate(epsilon: f64, batch_n: usize, batch_t: usize, features: ArrayView2<'_, f64>) -> f64 {
    let rows = features.nrows().max(1) as f64;
    let second_moment = features.iter().map(|v| v * v).sum::<f64>() / rows;
    let beta_edge = if second_moment > 0.0 {
        batch_t as f64 / second_moment
    } else {
        f64::INFINITY
    };
    epsilon * (batch_n as f64).min(beta_edge)
}

/// Mean of the (embedded) covariates; every row of `Ḡ` is this vector over `T^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanConstraint {
    pub xbar_row: Vec<f64>,
}

impl MeanConstraint {
    pub fn from_features(features: ArrayView2<'_, f64>) -> Self {
        Self {
            xbar_row: crate::data::column_means(features),
        }
    }
}

/// Fitted dual variables together with what is needed to decode them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub grid: GridShape,
    pub epsilon: f64,
    pub psi: Array1<f64>,
    /// `T^d x k'`; no columns for unconditional fits.
    pub beta: Array2<f64>,
    /// Recovered as `ε log(T^d Σ_j exp(S_ij / ε))`.
    pub phi: Array1<f64>,
    /// Softmax barycentre `Σ_j w_ij y_j` of each level.
    pub y_bar: Array2<f64>,
    /// Softmax barycentre `Σ_j w_ij g(x_j)` of each level.
    pub g_bar: Array2<f64>,
    pub mean: MeanConstraint,
    pub embedding: Option<Embedding>,
}

impl DualSolution {
    pub fn feature_dim(&self) -> usize {
        self.beta.ncols()
    }

    pub fn covariate_dim(&self) -> usize {
        match &self.embedding {
            Some(e) => e.input_dim(),
            None => self.beta.ncols(),
        }
    }

    pub fn make_grid(&self) -> Result<Arc<QuantileGrid>> {
        Ok(Arc::new(QuantileGrid::from_shape(self.grid)?))
    }

    /// `g(x)`: the embedding output, or `x` itself for linear VQR.
    pub fn features_of(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.covariate_dim() {
            return Err(shape_err(format!(
                "model expects {} covariates, got {}",
                self.covariate_dim(),
                x.len()
            )));
        }
        match &self.embedding {
            Some(e) => e.embed_one(x),
            None => Ok(x.to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub running_mean: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub solution: DualSolution,
    pub trace: Vec<TraceRow>,
}

/// Index sets drawn for one SGD step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub data: Vec<usize>,
    pub levels: Vec<usize>,
}

/// Uniform samples without replacement of data and level indices, each sorted.
/// A batch as large as its population is the full index range.
pub fn sample_batch(rng: &mut ChaCha8Rng, n: usize, levels: usize, batch_n: usize, batch_t: usize) -> Result<Batch> {
    let pick = |rng: &mut ChaCha8Rng, pop: usize, size: usize, what: &str| -> Result<Vec<usize>> {
        if size == 0 {
            return Err(Error::InvalidArgument(format!("{what} batch size must be positive")));
        }
        if size > pop {
            return Err(Error::InvalidArgument(format!(
                "{what} batch size {size} exceeds population {pop}"
            )));
        }
        if size == pop {
            return Ok((0..pop).collect());
        }
        let mut v = index::sample(rng, pop, size).into_vec();
        v.sort_unstable();
        Ok(v)
    };
    let data = pick(rng, n, batch_n, "data")?;
    let levels = pick(rng, levels, batch_t, "level")?;
    Ok(Batch { data, levels })
}

fn features_all<'a>(dataset: &'a Dataset, embed: Option<&Embedding>) -> Result<Cow<'a, Array2<f64>>> {
    match embed {
        Some(e) => Ok(Cow::Owned(embed_forward(e, dataset.x().view())?.0)),
        None => Ok(Cow::Borrowed(dataset.x())),
    }
}

fn check_solution_shapes(
    psi: &Array1<f64>,
    beta: &Array2<f64>,
    dataset: &Dataset,
    grid: &QuantileGrid,
    kp: usize,
) -> Result<()> {
    if psi.len() != dataset.len() {
        return Err(shape_err(format!("psi has {} entries for {} samples", psi.len(), dataset.len())));
    }
    if beta.dim() != (grid.len(), kp) {
        return Err(shape_err(format!(
            "beta is {:?}, expected ({}, {kp})",
            beta.dim(),
            grid.len()
        )));
    }
    if grid.dim() != dataset.d() {
        return Err(shape_err(format!("grid has d={} but targets d={}", grid.dim(), dataset.d())));
    }
    Ok(())
}

/// Exact relaxed dual objective over all levels and samples.
pub fn relaxed_dual_objective(
    psi: &Array1<f64>,
    beta: &Array2<f64>,
    dataset: &Dataset,
    grid: &QuantileGrid,
    epsilon: f64,
    embed: Option<&Embedding>,
) -> Result<f64> {
    let g = features_all(dataset, embed)?;
    check_solution_shapes(psi, beta, dataset, grid, g.ncols())?;
    objective_from_features(grid.levels().view(), dataset.y().view(), g.view(), beta.view(), psi.view(), epsilon)
}

/// Objective and gradients on the sampled batch. Gradient rows follow the order
/// of `batch.data` and `batch.levels`.
pub fn objective_gradients(
    psi: &Array1<f64>,
    beta: &Array2<f64>,
    dataset: &Dataset,
    grid: &QuantileGrid,
    batch: &Batch,
    epsilon: f64,
    embed: Option<&Embedding>,
) -> Result<BatchEval> {
    let kp = embed.map_or(dataset.k(), |e| e.output_dim());
    check_solution_shapes(psi, beta, dataset, grid, kp)?;
    let x_b = dataset.x().select(Axis(0), &batch.data);
    let g_b = match embed {
        Some(e) => embed_forward(e, x_b.view())?.0,
        None => x_b,
    };
    batch_objective(
        grid.levels().select(Axis(0), &batch.levels).view(),
        dataset.y().select(Axis(0), &batch.data).view(),
        g_b.view(),
        beta.select(Axis(0), &batch.levels).view(),
        psi.select(Axis(0), &batch.data).view(),
        epsilon,
        dataset.len(),
        false,
    )
}

/// `φ_i = ε log(T^d Σ_j exp((u_iᵀy_j - β_iᵀg(x_j) - ψ_j) / ε))`.
pub fn recover_phi(
    psi: &Array1<f64>,
    beta: &Array2<f64>,
    dataset: &Dataset,
    grid: &QuantileGrid,
    epsilon: f64,
    embed: Option<&Embedding>,
) -> Result<Array1<f64>> {
    let g = features_all(dataset, embed)?;
    check_solution_shapes(psi, beta, dataset, grid, g.ncols())?;
    let pass = full_pass(grid.levels().view(), dataset.y().view(), g.view(), beta.view(), psi.view(), epsilon, false)?;
    Ok(phi_from_lse(pass.lse, grid.len(), epsilon))
}

fn phi_from_lse(lse: Array1<f64>, levels: usize, epsilon: f64) -> Array1<f64> {
    let shift = epsilon * (levels as f64).ln();
    lse.mapv(|v| v + shift)
}

/// Assemble a [`DualSolution`] from fitted `ψ`, `β`: recovers `φ` and the
/// level barycentres in one streaming pass.
pub fn finish_solution(
    psi: Array1<f64>,
    beta: Array2<f64>,
    dataset: &Dataset,
    grid: &QuantileGrid,
    epsilon: f64,
    embedding: Option<Embedding>,
) -> Result<DualSolution> {
    let g = features_all(dataset, embedding.as_ref())?;
    check_solution_shapes(&psi, &beta, dataset, grid, g.ncols())?;
    let pass = full_pass(grid.levels().view(), dataset.y().view(), g.view(), beta.view(), psi.view(), epsilon, true)?;
    let mean = MeanConstraint::from_features(g.view());
    let FullPass { lse, y_bar, g_bar } = pass;
    Ok(DualSolution {
        grid: grid.shape(),
        epsilon,
        psi,
        beta,
        phi: phi_from_lse(lse, grid.len(), epsilon),
        y_bar: y_bar.expect("requested"),
        g_bar: g_bar.expect("requested"),
        mean,
        embedding,
    })
}

/// Fit linear VQR: `g(x) = x`.
pub fn fit_linear_vqr(dataset: &Dataset, grid: &QuantileGrid, config: &SolverConfig) -> Result<FitResult> {
    fit_dual(dataset, grid, config, None)
}

/// Shared SGD loop. With an embedding its parameters are updated with the
/// same learning rate unless the embedding is frozen.
pub fn fit_dual(
    dataset: &Dataset,
    grid: &QuantileGrid,
    config: &SolverConfig,
    mut embedding: Option<Embedding>,
) -> Result<FitResult> {
    config.validate()?;
    if grid.dim() != dataset.d() {
        return Err(shape_err(format!("grid has d={} but targets d={}", grid.dim(), dataset.d())));
    }
    if let Some(e) = &embedding {
        if e.input_dim() != dataset.k() {
            return Err(shape_err(format!(
                "embedding expects {} covariates, dataset has {}",
                e.input_dim(),
                dataset.k()
            )));
        }
    }
    let n = dataset.len();
    let levels = grid.len();
    let kp = embedding.as_ref().map_or(dataset.k(), |e| e.output_dim());
    let eps = config.epsilon;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut psi = Array1::<f64>::zeros(n);
    let mut beta = Array2::<f64>::zeros((levels, kp));
    let mut schedule = PlateauSchedule::new(
        config.learning_rate,
        config.lr_decay_factor,
        config.lr_patience_iters,
        config.lr_improvement_threshold,
    );
    let mut trace: Vec<TraceRow> = Vec::with_capacity(config.iterations);
    let diverged = |iteration: usize, trace: &[TraceRow]| Error::Divergence {
        iteration,
        last_finite: trace.last().map(|r| r.loss),
        trace: trace.iter().map(|r| r.loss).collect(),
    };

    for it in 0..config.iterations {
        let batch = sample_batch(&mut rng, n, levels, config.batch_n, config.batch_t)?;
        let x_b = dataset.x().select(Axis(0), &batch.data);
        let (g_b, cache) = match &embedding {
            Some(e) => {
                let (g, c) = embed_forward(e, x_b.view()).map_err(|_| diverged(it, &trace))?;
                (g, Some(c))
            }
            None => (x_b, None),
        };
        let train_embedding = embedding.as_ref().is_some_and(|e| e.trainable());
        let eval = batch_objective(
            grid.levels().select(Axis(0), &batch.levels).view(),
            dataset.y().select(Axis(0), &batch.data).view(),
            g_b.view(),
            beta.select(Axis(0), &batch.levels).view(),
            psi.select(Axis(0), &batch.data).view(),
            eps,
            n,
            train_embedding,
        )
        .map_err(|_| diverged(it, &trace))?;

        let lr = schedule.lr();
        for (&j, g) in batch.data.iter().zip(eval.grad_psi.iter()) {
            psi[j] -= lr * g;
        }
        if kp > 0 {
            for (&i, g) in batch.levels.iter().zip(eval.grad_beta.rows()) {
                beta.row_mut(i).scaled_add(-lr, &g);
            }
        }
        if let (true, Some(e), Some(c), Some(gf)) = (train_embedding, embedding.as_mut(), cache.as_ref(), eval.grad_features.as_ref()) {
            let (grads, _) = embed_backward(e, c, gf.view())?;
            e.apply_gradient(&grads, lr);
        }
        schedule.step(eval.loss);
        trace.push(TraceRow {
            iteration: it,
            loss: eval.loss,
            running_mean: schedule.running_mean(),
            learning_rate: lr,
        });
    }

    let solution = finish_solution(psi, beta, dataset, grid, eps, embedding).map_err(|e| match e {
        Error::Numeric { message, .. } => Error::Numeric {
            iteration: config.iterations,
            message,
        },
        other => other,
    })?;
    Ok(FitResult { solution, trace })
}

/// How a fitted solution is turned into quantiles on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CvqfDecoder {
    /// Analytic `u`-gradient of the smooth potential: the level's softmax
    /// barycentre of `y`, corrected by the finite-difference Jacobian of `β`
    /// applied to `g(x) - ḡ_i`.
    #[default]
    Barycentric,
    /// Forward differences of the tabulated potential `β(u)ᵀg(x) + φ(u)`.
    FiniteDifference,
}

/// Tabulate `Q̂(u; x)` on the grid.
pub fn evaluate_cvqf(
    solution: &DualSolution,
    x: &[f64],
    grid: &Arc<QuantileGrid>,
    decoder: CvqfDecoder,
) -> Result<DiscreteCvqf> {
    if grid.shape() != solution.grid {
        return Err(shape_err(format!(
            "grid {:?} does not match solution grid {:?}",
            grid.shape(),
            solution.grid
        )));
    }
    let g = solution.features_of(x)?;
    let values = match decoder {
        CvqfDecoder::FiniteDifference => {
            let potential = combine_columns(&solution.beta, &g, Some(&solution.phi));
            potential_gradient(potential.view(), grid)?
        }
        CvqfDecoder::Barycentric => {
            let mut q = solution.y_bar.clone();
            for (c, &gc) in g.iter().enumerate() {
                let jac = potential_gradient(solution.beta.column(c), grid)?;
                let offset = solution.g_bar.column(c).mapv(|gb| gc - gb);
                q += &(&jac * &offset.insert_axis(Axis(1)));
            }
            q
        }
    };
    let x = (!x.is_empty()).then(|| x.to_vec());
    DiscreteCvqf::new(grid.clone(), values, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_init_objective_closed_form() {
        let y = Array2::zeros((6, 2));
        let ds = Dataset::unconditional(y, 0, "z").unwrap();
        let grid = QuantileGrid::new(3, 2).unwrap();
        let f = relaxed_dual_objective(&Array1::zeros(6), &Array2::zeros((9, 0)), &ds, &grid, 1.0, None).unwrap();
        assert!((f - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_cell_objective() {
        let ds = Dataset::unconditional(array![[2.0]], 0, "one").unwrap();
        let grid = QuantileGrid::new(1, 1).unwrap();
        let f = relaxed_dual_objective(&array![0.0], &Array2::zeros((1, 0)), &ds, &grid, 1.0, None).unwrap();
        assert!((f - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_psi_gradient_vanishes() {
        let ds = Dataset::new(array![[0.3]], array![[1.0, -1.0]], 0, "one").unwrap();
        let grid = QuantileGrid::new(3, 2).unwrap();
        let batch = Batch {
            data: vec![0],
            levels: (0..9).collect(),
        };
        let ev = objective_gradients(&array![0.0], &Array2::zeros((9, 1)), &ds, &grid, &batch, 1.0, None).unwrap();
        assert!(ev.grad_psi[0].abs() < 1e-15);
    }

    #[test]
    fn phi_single_sample_closed_form() {
        let ds = Dataset::unconditional(array![[0.7, -0.2]], 0, "one").unwrap();
        let grid = QuantileGrid::new(2, 2).unwrap();
        let phi = recover_phi(&array![0.0], &Array2::zeros((4, 0)), &ds, &grid, 1.0, None).unwrap();
        for (i, u) in grid.levels().rows().into_iter().enumerate() {
            let s = u[0] * 0.7 - u[1] * 0.2;
            assert!((phi[i] - (s + 4f64.ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&mut rng, 7, 4, 7, 4).unwrap();
        assert_eq!(b.data, (0..7).collect::<Vec<_>>());
        assert_eq!(b.levels, (0..4).collect::<Vec<_>>());
        assert!(sample_batch(&mut rng, 3, 4, 4, 1).is_err());
        let b = sample_batch(&mut rng, 100, 50, 10, 5).unwrap();
        assert_eq!(b.data.len(), 10);
        assert!(b.data.windows(2).all(|w| w[0] < w[1]));
    }
}
