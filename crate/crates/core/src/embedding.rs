//! Learned feature map `g_θ`: a small fully connected ReLU network trained
//! jointly with the dual variables for nonlinear VQR.
//!
//! Layers run input -> hidden_sizes... -> output_dim. Hidden layers apply a
//! rectifier; the output layer is affine. With `skip_connections` a hidden
//! layer whose input and output widths agree adds its input to its output.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::grid::QuantileGrid;
use crate::solver::{fit_dual, FitResult, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    pub skip_connections: bool,
    pub seed: u64,
    /// Standardise inputs with the training mean and standard deviation.
    #[serde(default)]
    pub standardize: bool,
    /// A frozen embedding keeps its initial parameters during fitting.
    #[serde(default = "default_true")]
    pub trainable: bool,
}

fn default_true() -> bool {
    true
}

impl EmbeddingSpec {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_sizes,
            output_dim,
            skip_connections: true,
            seed: 0,
            standardize: true,
            trainable: true,
        }
    }

    /// Widths of every layer boundary, input first.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.hidden_sizes.iter().copied())
            .chain(std::iter::once(self.output_dim))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(format!(
                "embedding widths must be positive, got {:?}",
                self.widths()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub layers: Vec<DenseLayer>,
}

impl EmbeddingParams {
    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(shape_err(format!("expected {} parameters, got {}", self.len(), flat.len())));
        }
        let mut pos = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = flat[pos];
                pos += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[pos];
                pos += 1;
            }
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub spec: EmbeddingSpec,
    pub params: EmbeddingParams,
    pub shift: Array1<f64>,
    pub scale: Array1<f64>,
    #[serde(skip)]
    version: u64,
}

/// Activations kept by [`embed_forward`] for the matching backward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each layer (the standardised input first).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    version: u64,
}

impl Embedding {
    /// Glorot-uniform weights, zero biases, seeded by `spec.seed`.
    pub fn init(spec: EmbeddingSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let widths = spec.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                DenseLayer {
                    weight: Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..=limit)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        let k = spec.input_dim;
        Ok(Self {
            spec,
            params: EmbeddingParams { layers },
            shift: Array1::zeros(k),
            scale: Array1::ones(k),
            version: 0,
        })
    }

    /// A single affine layer with identity weights: `g(x) = x`.
    pub fn identity(k: usize) -> Self {
        let spec = EmbeddingSpec {
            input_dim: k,
            hidden_sizes: vec![],
            output_dim: k,
            skip_connections: false,
            seed: 0,
            standardize: false,
            trainable: false,
        };
        Self {
            params: EmbeddingParams {
                layers: vec![DenseLayer {
                    weight: Array2::eye(k),
                    bias: Array1::zeros(k),
                }],
            },
            shift: Array1::zeros(k),
            scale: Array1::ones(k),
            spec,
            version: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn trainable(&self) -> bool {
        self.spec.trainable
    }

    /// Set the input standardisation from training covariates.
    pub fn fit_standardization(&mut self, x: ArrayView2<'_, f64>) {
        if !self.spec.standardize || x.nrows() == 0 {
            return;
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let sd = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        self.shift = mean;
        self.scale = sd;
        self.version += 1;
    }

    /// `θ <- θ - lr * grad`.
    pub fn apply_gradient(&mut self, grad: &EmbeddingParams, lr: f64) {
        for (l, g) in self.params.layers.iter_mut().zip(&grad.layers) {
            l.weight.scaled_add(-lr, &g.weight);
            l.bias.scaled_add(-lr, &g.bias);
        }
        self.version += 1;
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.params.set_flat(flat)?;
        self.version += 1;
        Ok(())
    }

    /// `g(x)` for a single covariate vector.
    pub fn embed_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| shape_err(e.to_string()))?;
        let (out, _) = embed_forward(self, view)?;
        Ok(out.row(0).to_vec())
    }

    fn skip(&self, layer: usize) -> bool {
        let hidden = self.spec.hidden_sizes.len();
        let l = &self.params.layers[layer];
        self.spec.skip_connections && layer < hidden && l.weight.nrows() == l.weight.ncols()
    }
}

/// Forward pass over a batch of covariate rows. Returns `g(x)` row by row and
/// the activations needed by [`embed_backward`].
pub fn embed_forward(emb: &Embedding, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
    if x.ncols() != emb.input_dim() {
        return Err(shape_err(format!(
            "embedding expects {} inputs, got {}",
            emb.input_dim(),
            x.ncols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("embedding input must be finite".into()));
    }
    let mut h = (&x - &emb.shift.view().insert_axis(Axis(0))) / &emb.scale.view().insert_axis(Axis(0));
    let hidden = emb.spec.hidden_sizes.len();
    let mut inputs = Vec::with_capacity(hidden + 1);
    let mut pre = Vec::with_capacity(hidden);
    for (idx, layer) in emb.params.layers.iter().enumerate() {
        let mut z = h.dot(&layer.weight.t());
        z += &layer.bias.view().insert_axis(Axis(0));
        if idx < hidden {
            let mut a = z.mapv(|v| v.max(0.0));
            if emb.skip(idx) {
                a += &h;
            }
            inputs.push(std::mem::replace(&mut h, a));
            pre.push(z);
        } else {
            inputs.push(std::mem::replace(&mut h, z));
        }
    }
    Ok((
        h,
        ForwardCache {
            inputs,
            pre,
            version: emb.version,
        },
    ))
}

/// Reverse-mode gradients of `Σ_rows upstream · g(x)` with respect to the
/// parameters and to the raw inputs.
pub fn embed_backward(
    emb: &Embedding,
    cache: &ForwardCache,
    upstream: ArrayView2<'_, f64>,
) -> Result<(EmbeddingParams, Array2<f64>)> {
    if cache.version != emb.version || cache.inputs.len() != emb.params.layers.len() {
        return Err(Error::InvalidArgument("stale embedding cache".into()));
    }
    let n = cache.inputs[0].nrows();
    if upstream.dim() != (n, emb.output_dim()) {
        return Err(shape_err(format!(
            "upstream gradient is {:?}, expected ({n}, {})",
            upstream.dim(),
            emb.output_dim()
        )));
    }
    let hidden = emb.spec.hidden_sizes.len();
    let mut grads = emb.params.zeros_like();
    let mut dh = upstream.to_owned();
    for idx in (0..emb.params.layers.len()).rev() {
        let layer = &emb.params.layers[idx];
        let input = &cache.inputs[idx];
        let dz = if idx < hidden {
            let mask = cache.pre[idx].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            &dh * &mask
        } else {
            dh.clone()
        };
        grads.layers[idx].weight = dz.t().dot(input);
        grads.layers[idx].bias = dz.sum_axis(Axis(0));
        let mut prev = dz.dot(&layer.weight);
        if idx < hidden && emb.skip(idx) {
            prev += &dh;
        }
        dh = prev;
    }
    let grad_x = dh / &emb.scale.view().insert_axis(Axis(0));
    Ok((grads, grad_x))
}

/// Nonlinear VQR: the relaxed dual with covariates replaced by `g_θ(x)`,
/// optimising `(ψ, β, θ)` together.
pub fn fit_nonlinear_vqr(
    dataset: &Dataset,
    grid: &QuantileGrid,
    config: &SolverConfig,
    spec: &EmbeddingSpec,
) -> Result<FitResult> {
    if spec.input_dim != dataset.k() {
        return Err(shape_err(format!(
            "embedding input_dim {} but dataset has k={}",
            spec.input_dim,
            dataset.k()
        )));
    }
    let mut emb = Embedding::init(spec.clone())?;
    emb.fit_standardization(dataset.x().view());
    fit_dual(dataset, grid, config, Some(emb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_spec(skip: bool) -> EmbeddingSpec {
        EmbeddingSpec {
            input_dim: 2,
            hidden_sizes: vec![3, 3],
            output_dim: 2,
            skip_connections: skip,
            seed: 5,
            standardize: false,
            trainable: true,
        }
    }

    #[test]
    fn identity_layer_is_identity() {
        let emb = Embedding::identity(3);
        assert_eq!(emb.embed_one(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn zero_parameters_give_zero() {
        let mut emb = Embedding::init(small_spec(false)).unwrap();
        let zeros = vec![0.0; emb.params.len()];
        emb.set_params_flat(&zeros).unwrap();
        assert_eq!(emb.embed_one(&[3.0, -1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let emb = Embedding::init(EmbeddingSpec::new(4, vec![10], 6)).unwrap();
        let lim0 = (6.0f64 / 14.0).sqrt();
        assert!(emb.params.layers[0].weight.iter().all(|w| w.abs() <= lim0));
        assert!(emb.params.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let mut spec = small_spec(false);
        spec.hidden_sizes.clear();
        let emb = Embedding::init(spec).unwrap();
        let x = array![[0.5, -1.0]];
        let (_, cache) = embed_forward(&emb, x.view()).unwrap();
        let up = array![[2.0, 3.0]];
        let (g, _) = embed_backward(&emb, &cache, up.view()).unwrap();
        let want = array![[1.0, -2.0], [1.5, -3.0]];
        assert_eq!(g.layers[0].weight, want);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut emb = Embedding::init(small_spec(true)).unwrap();
        let x = array![[0.5, -1.0]];
        let (_, cache) = embed_forward(&emb, x.view()).unwrap();
        let g = emb.params.clone();
        emb.apply_gradient(&g, 0.0);
        assert!(embed_backward(&emb, &cache, array![[1.0, 1.0]].view()).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let emb = Embedding::init(small_spec(true)).unwrap();
        let x = array![[0.5, -1.0], [0.1, 0.2]];
        let (_, cache) = embed_forward(&emb, x.view()).unwrap();
        let (g, gx) = embed_backward(&emb, &cache, Array2::zeros((2, 2)).view()).unwrap();
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
        assert!(gx.iter().all(|v| *v == 0.0));
    }
}
