//! Fitted models behind one interface: joint linear or nonlinear VQR, and the
//! separable baseline that fits each target dimension on its own and combines
//! the per-dimension quantiles on the product grid.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cvqf::{separable_cvqf, DiscreteCvqf};
use crate::data::Dataset;
use crate::embedding::{fit_nonlinear_vqr, EmbeddingSpec};
use crate::error::{Error, Result};
use crate::grid::QuantileGrid;
use crate::solver::{evaluate_cvqf, fit_linear_vqr, CvqfDecoder, DualSolution, SolverConfig, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Nonlinear,
    /// Independent one-dimensional fits per target (linear, or nonlinear
    /// when an embedding is given).
    Separable,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "vqr" => Ok(Self::Linear),
            "nonlinear" | "nl" | "nl-vqr" => Ok(Self::Nonlinear),
            "separable" | "sep" => Ok(Self::Separable),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind '{other}' (expected linear, nonlinear or separable)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Joint { solution: DualSolution },
    Separable { t: usize, components: Vec<DualSolution> },
}

#[derive(Debug, Clone)]
pub struct ModelFit {
    pub model: FittedModel,
    /// One trace per fitted solution (a single one for joint models).
    pub traces: Vec<Vec<TraceRow>>,
}

/// Fit `kind` on `dataset` with `T` levels per axis. `embedding` is required
/// for [`ModelKind::Nonlinear`] and optional for the separable baseline.
pub fn fit_model(
    dataset: &Dataset,
    t: usize,
    kind: ModelKind,
    config: &SolverConfig,
    embedding: Option<&EmbeddingSpec>,
) -> Result<ModelFit> {
    // batch sizes larger than the problem mean "everything"
    let fit_one = |ds: &Dataset, grid: &QuantileGrid, spec: Option<&EmbeddingSpec>| {
        let config = config.clamped_to(ds.len(), grid.len());
        match spec {
            Some(s) => fit_nonlinear_vqr(ds, grid, &config, s),
            None => fit_linear_vqr(ds, grid, &config),
        }
    };
    match kind {
        ModelKind::Linear | ModelKind::Nonlinear => {
            let spec = match (kind, embedding) {
                (ModelKind::Nonlinear, None) => {
                    return Err(Error::InvalidArgument("nonlinear VQR needs an embedding spec".into()))
                }
                (ModelKind::Nonlinear, s) => s,
                _ => None,
            };
            let grid = QuantileGrid::new(t, dataset.d())?;
            let fit = fit_one(dataset, &grid, spec)?;
            Ok(ModelFit {
                model: FittedModel::Joint { solution: fit.solution },
                traces: vec![fit.trace],
            })
        }
        ModelKind::Separable => {
            let grid = QuantileGrid::new(t, 1)?;
            let mut components = Vec::with_capacity(dataset.d());
            let mut traces = Vec::with_capacity(dataset.d());
            for c in 0..dataset.d() {
                let fit = fit_one(&dataset.target_column(c)?, &grid, embedding)?;
                components.push(fit.solution);
                traces.push(fit.trace);
            }
            Ok(ModelFit {
                model: FittedModel::Separable { t, components },
                traces,
            })
        }
    }
}

impl FittedModel {
    /// The product grid every CVQF of this model lives on.
    pub fn grid(&self) -> Result<Arc<QuantileGrid>> {
        match self {
            FittedModel::Joint { solution } => solution.make_grid(),
            FittedModel::Separable { t, components } => Ok(Arc::new(QuantileGrid::new(*t, components.len())?)),
        }
    }

    pub fn covariate_dim(&self) -> usize {
        match self {
            FittedModel::Joint { solution } => solution.covariate_dim(),
            FittedModel::Separable { components, .. } => components.first().map_or(0, |c| c.covariate_dim()),
        }
    }

    pub fn target_dim(&self) -> usize {
        match self {
            FittedModel::Joint { solution } => solution.grid.d,
            FittedModel::Separable { components, .. } => components.len(),
        }
    }

    /// `Q̂(·; x)` on `grid`, which must be [`FittedModel::grid`] or equal to it.
    pub fn cvqf(&self, x: &[f64], grid: &Arc<QuantileGrid>, decoder: CvqfDecoder) -> Result<DiscreteCvqf> {
        match self {
            FittedModel::Joint { solution } => evaluate_cvqf(solution, x, grid, decoder),
            FittedModel::Separable { t, components } => {
                let g1 = Arc::new(QuantileGrid::new(*t, 1)?);
                let per_dim = components
                    .iter()
                    .map(|c| evaluate_cvqf(c, x, &g1, decoder))
                    .collect::<Result<Vec<_>>>()?;
                let joint = separable_cvqf(&per_dim)?;
                if joint.grid().shape() != grid.shape() {
                    return Err(crate::error::shape_err(format!(
                        "separable model lives on {:?}, asked for {:?}",
                        joint.grid().shape(),
                        grid.shape()
                    )));
                }
                DiscreteCvqf::new(grid.clone(), joint.into_values(), joint_x(x))
            }
        }
    }
}

fn joint_x(x: &[f64]) -> Option<Vec<f64>> {
    (!x.is_empty()).then(|| x.to_vec())
}
