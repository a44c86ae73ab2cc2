//! Vector quantile regression through the relaxed dual of its optimal
//! transport formulation.
//!
//! The crate fits linear and nonlinear conditional vector quantile functions
//! with mini-batch SGD, decodes them onto a quantile grid, rearranges them into
//! co-monotone maps, and scores them with density, quantile and coverage
//! metrics on synthetic data.

pub mod contour;
pub mod cvqf;
pub mod data;
pub mod datasets;
pub mod embedding;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod vmr;

pub use contour::{alpha_contour, contour_indices, snap_alpha, Contour, ContourSpec};
pub use cvqf::{comonotone_product, decode_potential, invert_cvqf, separable_cvqf, DiscreteCvqf};
pub use data::Dataset;
pub use embedding::{fit_nonlinear_vqr, Embedding, EmbeddingSpec};
pub use error::{Error, Result};
pub use grid::{make_grid, GridShape, QuantileGrid};
pub use model::{fit_model, FittedModel, ModelFit, ModelKind};
pub use solver::{
    evaluate_cvqf, fit_linear_vqr, relaxed_dual_objective, suggested_learning_rate, CvqfDecoder, DualSolution, FitResult, SolverConfig,
};
pub use vmr::{rearrange, solve_assignment};
