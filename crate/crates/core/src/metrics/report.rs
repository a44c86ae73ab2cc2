//! The evaluation pipeline: draw ground truth at `L` conditioning values,
//! compare a model's CVQFs against it, and collect a [`MetricReport`].

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvqf::DiscreteCvqf;
use crate::data::Dataset;
use crate::datasets::Generator;
use crate::error::{Error, Result};
use crate::grid::QuantileGrid;
use crate::solver::SolverConfig;

use super::coverage::coverage_curve;
use super::{fit_proxy_vqf, inverse_entropy, kde_l1, monotonicity_violations, qfd, sample_cvqf, DEFAULT_BINS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerCondition {
    pub x: Vec<f64>,
    pub kde_l1: Option<f64>,
    pub qfd: Option<f64>,
    pub entropy: Option<f64>,
    pub mv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    /// Number of conditioning values.
    pub l: usize,
    /// Samples per conditioning value.
    pub m: usize,
    pub seed: u64,
    pub kde_bins: usize,
    pub kde_sigma: f64,
    /// How the quantile-function distance is normalised.
    pub qfd_norm: String,
    pub alpha: Option<f64>,
    pub test_n: Option<usize>,
    pub per_condition: Vec<PerCondition>,
}

/// Means over the conditioning values (coverage and area over the test set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kde_l1: Option<f64>,
    pub qfd: Option<f64>,
    pub entropy: Option<f64>,
    pub entropy_ref: Option<f64>,
    pub mv: Option<f64>,
    pub coverage: Option<f64>,
    pub area: Option<f64>,
    pub meta: ReportMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub l: usize,
    pub m: usize,
    pub bins: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Solver settings for the proxy-truth fits; `None` skips the QFD.
    pub proxy: Option<SolverConfig>,
    pub entropy: bool,
    /// α for coverage and area on a held-out set (two-dimensional targets only).
    pub alpha: Option<f64>,
    pub test_n: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            l: 20,
            m: 4000,
            bins: DEFAULT_BINS,
            sigma: 0.05,
            seed: 0,
            proxy: None,
            entropy: true,
            alpha: None,
            test_n: 1000,
        }
    }
}

/// `L` covariate values at which conditional distributions are compared.
pub fn conditioning_values(gen: &Generator, l: usize) -> Vec<Vec<f64>> {
    let k = gen.k();
    (0..l)
        .map(|i| match gen {
            Generator::Banana(_) => {
                let v = if l == 1 { 2.0 } else { 1.1 + 1.9 * i as f64 / (l - 1) as f64 };
                vec![v; k]
            }
            Generator::Star(s) => vec![s.angles[i % s.angles.len()]],
            Generator::Mvn(_) | Generator::Glasses(_) => vec![(i as f64 + 0.5) / l as f64; k],
        })
        .collect()
}

/// Ground-truth samples (and optional proxy VQFs) at each conditioning value,
/// plus an optional held-out joint sample for coverage.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub xs: Vec<Vec<f64>>,
    pub samples: Vec<Array2<f64>>,
    pub proxies: Option<Vec<DiscreteCvqf>>,
    pub test: Option<Dataset>,
}

impl GroundTruth {
    pub fn build(gen: &Generator, grid: &Arc<QuantileGrid>, opts: &EvalOptions) -> Result<Self> {
        let xs = conditioning_values(gen, opts.l);
        let samples = xs
            .iter()
            .enumerate()
            .map(|(i, x)| gen.sample_conditional(x, opts.m, opts.seed.wrapping_add(1000 + i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let proxies = match &opts.proxy {
            Some(cfg) => Some(
                samples
                    .iter()
                    .map(|s| fit_proxy_vqf(s.view(), grid, cfg))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        let test = match opts.alpha {
            Some(_) if gen.d() == 2 => Some(gen.dataset(opts.test_n, opts.seed.wrapping_add(77))?),
            _ => None,
        };
        Ok(Self {
            xs,
            samples,
            proxies,
            test,
        })
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Score the CVQFs produced by `provider` against `truth`.
pub fn evaluate_model<F>(provider: F, truth: &GroundTruth, opts: &EvalOptions) -> Result<MetricReport>
where
    F: Fn(&[f64]) -> Result<DiscreteCvqf>,
{
    let d = truth.samples.first().map_or(0, |s| s.ncols());
    let mut per = Vec::with_capacity(truth.xs.len());
    let (mut kdes, mut qfds, mut ents, mut refs, mut mvs) = (vec![], vec![], vec![], vec![], vec![]);
    for (i, x) in truth.xs.iter().enumerate() {
        let cvqf = provider(x)?;
        let gt = &truth.samples[i];
        let kde = if d <= 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(5000 + i as u64));
            let model = sample_cvqf(&cvqf, opts.m, &mut rng);
            Some(kde_l1(model.view(), gt.view(), opts.bins, opts.sigma)?)
        } else {
            None
        };
        let q = match &truth.proxies {
            Some(p) => Some(qfd(&cvqf, &p[i])?),
            None => None,
        };
        let ent = if opts.entropy {
            let (h, r) = inverse_entropy(&cvqf, gt.view(), opts.seed.wrapping_add(9000 + i as u64))?;
            refs.push(r);
            Some(h)
        } else {
            None
        };
        let mv = monotonicity_violations(&cvqf);
        kdes.extend(kde);
        qfds.extend(q);
        ents.extend(ent);
        mvs.push(mv);
        per.push(PerCondition {
            x: x.clone(),
            kde_l1: kde,
            qfd: q,
            entropy: ent,
            mv,
        });
    }
    let (coverage, area) = match (opts.alpha, &truth.test) {
        (Some(alpha), Some(test)) => {
            let cvqfs = if test.k() == 0 {
                vec![provider(&[])?]
            } else {
                test.x()
                    .rows()
                    .into_iter()
                    .map(|x| provider(&x.to_vec()))
                    .collect::<Result<Vec<_>>>()?
            };
            let stats = coverage_curve(&cvqfs, test.y().view(), &[alpha])?;
            (Some(stats[0].coverage), Some(stats[0].area))
        }
        (Some(_), None) if d != 2 => {
            return Err(Error::Unsupported("coverage and area need d = 2".into()));
        }
        _ => (None, None),
    };
    Ok(MetricReport {
        kde_l1: mean(&kdes),
        qfd: mean(&qfds),
        entropy: mean(&ents),
        entropy_ref: mean(&refs),
        mv: mean(&mvs),
        coverage,
        area,
        meta: ReportMeta {
            l: truth.xs.len(),
            m: opts.m,
            seed: opts.seed,
            kde_bins: opts.bins,
            kde_sigma: opts.sigma,
            qfd_norm: "frobenius".into(),
            alpha: opts.alpha,
            test_n: truth.test.as_ref().map(|t| t.len()),
            per_condition: per,
        },
    })
}
