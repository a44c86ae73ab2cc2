//! Seeded synthetic data: a linear-Gaussian model, the conditional banana, the
//! synthetic glasses and the rotating star. Each generator can redraw `Y` for a
//! fixed `x`, which is what the metrics use as ground truth.
//!
//! One seed drives everything: generator parameters (projection, covariance,
//! banana direction) are drawn first from the stream, then the samples.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::metrics::point_in_polygon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorName {
    Mvn,
    Banana,
    Glasses,
    Star,
}

impl std::str::FromStr for GeneratorName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mvn" => Ok(Self::Mvn),
            "banana" => Ok(Self::Banana),
            "glasses" => Ok(Self::Glasses),
            "star" => Ok(Self::Star),
            other => Err(Error::InvalidArgument(format!(
                "unknown generator `{other}` (expected mvn, banana, glasses or star)"
            ))),
        }
    }
}

impl std::fmt::Display for GeneratorName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mvn => "mvn",
            Self::Banana => "banana",
            Self::Glasses => "glasses",
            Self::Star => "star",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub name: GeneratorName,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    /// Star rotation angles in degrees.
    #[serde(default = "default_angles")]
    pub angles: Vec<f64>,
    /// MVN noise covariance replacing the random one (`d x d`, row-major).
    #[serde(default)]
    pub covariance: Option<Vec<f64>>,
}

pub fn default_angles() -> Vec<f64> {
    (0..=6).map(|a| 10.0 * a as f64).collect()
}

impl GeneratorSpec {
    pub fn new(name: GeneratorName, n: usize, seed: u64) -> Self {
        let (k, d) = match name {
            GeneratorName::Mvn => (1, 2),
            GeneratorName::Banana | GeneratorName::Star => (1, 2),
            GeneratorName::Glasses => (1, 1),
        };
        Self {
            name,
            n,
            k,
            d,
            seed,
            angles: default_angles(),
            covariance: None,
        }
    }

    pub fn build(&self) -> Result<(Dataset, Generator)> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("generator needs N >= 1".into()));
        }
        match self.name {
            GeneratorName::Mvn => {
                let cov = match &self.covariance {
                    Some(c) => Some(
                        Array2::from_shape_vec((self.d, self.d), c.clone())
                            .map_err(|_| shape_err(format!("covariance needs {} entries", self.d * self.d)))?,
                    ),
                    None => None,
                };
                gen_mvn_with(self.n, self.k, self.d, self.seed, cov)
            }
            GeneratorName::Banana => {
                if self.d != 2 {
                    return Err(shape_err("banana targets are two-dimensional"));
                }
                gen_banana(self.n, self.k, self.seed)
            }
            GeneratorName::Glasses => {
                if self.d != 1 || self.k != 1 {
                    return Err(shape_err("glasses has k = 1 and d = 1"));
                }
                gen_glasses(self.n, self.seed)
            }
            GeneratorName::Star => {
                if self.d != 2 || self.k != 1 {
                    return Err(shape_err("star has k = 1 and d = 2"));
                }
                gen_star(self.n, self.seed, &self.angles)
            }
        }
    }
}

/// Linear model `y = A x + η`, `η ~ N(0, L Lᵀ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mvn {
    /// `d x k`.
    pub a: Array2<f64>,
    /// Lower-triangular noise factor, `d x d`.
    pub l: Array2<f64>,
}

impl Mvn {
    pub fn covariance(&self) -> Array2<f64> {
        self.l.dot(&self.l.t())
    }

    pub fn mean(&self, x: &[f64]) -> Array1<f64> {
        self.a.dot(&Array1::from(x.to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Banana {
    /// Direction with unit ℓ₁ norm, fixed per dataset.
    pub beta: Vec<f64>,
    /// Scale of the `r` perturbation; 1 reproduces the process, 0 removes it.
    pub r_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Glasses {
    /// Forced branch: `Some(true)` always draws `Y₁`.
    pub gamma: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Star {
    pub angles: Vec<f64>,
}

/// A data-generating process that can draw `x` and `y | x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Generator {
    Mvn(Mvn),
    Banana(Banana),
    Glasses(Glasses),
    Star(Star),
}

impl Generator {
    pub fn k(&self) -> usize {
        match self {
            Generator::Mvn(m) => m.a.ncols(),
            Generator::Banana(b) => b.beta.len(),
            Generator::Glasses(_) | Generator::Star(_) => 1,
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Generator::Mvn(m) => m.a.nrows(),
            Generator::Banana(_) | Generator::Star(_) => 2,
            Generator::Glasses(_) => 1,
        }
    }

    pub fn name(&self) -> GeneratorName {
        match self {
            Generator::Mvn(_) => GeneratorName::Mvn,
            Generator::Banana(_) => GeneratorName::Banana,
            Generator::Glasses(_) => GeneratorName::Glasses,
            Generator::Star(_) => GeneratorName::Star,
        }
    }

    pub fn sample_x(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Generator::Mvn(m) => (0..m.a.ncols()).map(|_| rng.random::<f64>()).collect(),
            Generator::Banana(b) => (0..b.beta.len()).map(|_| rng.random_range(0.8..3.2)).collect(),
            Generator::Glasses(_) => vec![rng.random::<f64>()],
            Generator::Star(s) => vec![s.angles[rng.random_range(0..s.angles.len())]],
        }
    }

    /// One draw of `Y | X = x`, written into `out`.
    pub fn sample_y(&self, x: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            Generator::Mvn(m) => {
                let d = m.a.nrows();
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                for (r, o) in out.iter_mut().enumerate() {
                    let mean: f64 = m.a.row(r).iter().zip(x).map(|(a, v)| a * v).sum();
                    let noise: f64 = (0..=r).map(|c| m.l[[r, c]] * z[c]).sum();
                    *o = mean + noise;
                }
            }
            Generator::Banana(b) => {
                let z = rng.random_range(-PI..PI);
                let angle = rng.random_range(0.0..2.0 * PI);
                let r = b.r_scale * rng.random_range(-0.1..0.1);
                let s: f64 = b.beta.iter().zip(x).map(|(w, v)| w * v).sum();
                out[0] = 0.5 * (1.0 - z.cos()) + r * angle.sin() + s.sin();
                out[1] = z / s + r * angle.cos();
            }
            Generator::Glasses(g) => {
                let z1 = 3.0 * PI * x[0];
                let z2 = PI * (1.0 + 3.0 * x[0]);
                // Beta(0.5, 1) has CDF √t, so its inverse is u²
                let e = rng.random::<f64>().powi(2);
                let first = match g.gamma {
                    Some(v) => v,
                    None => rng.random::<bool>(),
                };
                out[0] = if first {
                    5.0 * z1.sin() + 2.5 + e
                } else {
                    5.0 * z2.sin() + 2.5 - e
                };
            }
            Generator::Star(_) => {
                let p = sample_in_star(rng);
                let (s, c) = x[0].to_radians().sin_cos();
                out[0] = c * p[0] - s * p[1];
                out[1] = s * p[0] + c * p[1];
            }
        }
    }

    /// `m` fresh draws of `Y | X = x` from a dedicated stream.
    pub fn sample_conditional(&self, x: &[f64], m: usize, seed: u64) -> Result<Array2<f64>> {
        if x.len() != self.k() {
            return Err(shape_err(format!("conditioning vector has {} entries, expected {}", x.len(), self.k())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.d();
        let mut out = Array2::zeros((m, d));
        let mut buf = vec![0.0; d];
        for mut row in out.rows_mut() {
            self.sample_y(x, &mut rng, &mut buf);
            row.assign(&Array1::from(buf.clone()));
        }
        Ok(out)
    }

    /// `n` joint draws from `rng`.
    pub fn sample_joint(&self, n: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>) {
        let (k, d) = (self.k(), self.d());
        let mut xs = Array2::zeros((n, k));
        let mut ys = Array2::zeros((n, d));
        let mut buf = vec![0.0; d];
        for i in 0..n {
            let x = self.sample_x(rng);
            self.sample_y(&x, rng, &mut buf);
            for (c, v) in x.iter().enumerate() {
                xs[[i, c]] = *v;
            }
            for (c, v) in buf.iter().enumerate() {
                ys[[i, c]] = *v;
            }
        }
        (xs, ys)
    }

    /// A fresh joint sample, e.g. a held-out split, from its own seed.
    pub fn dataset(&self, n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = self.sample_joint(n, &mut rng);
        Dataset::new(x, y, seed, self.name().to_string())
    }
}

/// Vertices of the five-pointed star: outer radius 1, inner radius 0.5, first
/// point straight up, counter-clockwise.
pub fn star_polygon() -> Vec<[f64; 2]> {
    (0..10)
        .map(|i| {
            let r = if i % 2 == 0 { 1.0 } else { 0.5 };
            let a = PI / 2.0 + i as f64 * PI / 5.0;
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}

fn sample_in_star(rng: &mut ChaCha8Rng) -> [f64; 2] {
    thread_local! {
        static POLY: Vec<[f64; 2]> = star_polygon();
    }
    POLY.with(|poly| loop {
        let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        if point_in_polygon(poly, p) {
            return p;
        }
    })
}

fn finish(gen: Generator, n: usize, seed: u64, rng: &mut ChaCha8Rng) -> Result<(Dataset, Generator)> {
    let (x, y) = gen.sample_joint(n, rng);
    let ds = Dataset::new(x, y, seed, gen.name().to_string())?;
    Ok((ds, gen))
}

pub fn gen_mvn(n: usize, k: usize, d: usize, seed: u64) -> Result<(Dataset, Generator)> {
    gen_mvn_with(n, k, d, seed, None)
}

/// MVN with an optional fixed noise covariance (must be positive semi-definite).
pub fn gen_mvn_with(n: usize, k: usize, d: usize, seed: u64, covariance: Option<Array2<f64>>) -> Result<(Dataset, Generator)> {
    if k == 0 || d == 0 {
        return Err(Error::InvalidArgument("mvn needs k >= 1 and d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Array2::from_shape_fn((d, k), |_| rng.random_range(-1.0..=1.0));
    let mut l = Array2::from_shape_fn((d, d), |(r, c)| {
        if c <= r {
            rng.random_range(-0.5..=0.5)
        } else {
            0.0
        }
    });
    for i in 0..d {
        l[[i, i]] += 0.5;
    }
    if let Some(cov) = covariance {
        if cov.dim() != (d, d) {
            return Err(shape_err(format!("covariance must be {d}x{d}")));
        }
        l = cholesky(&cov)?;
    }
    finish(Generator::Mvn(Mvn { a, l }), n, seed, &mut rng)
}

pub fn gen_banana(n: usize, k: usize, seed: u64) -> Result<(Dataset, Generator)> {
    gen_banana_with(n, k, seed, 1.0)
}

/// Banana with the `r` perturbation scaled by `r_scale` (0 gives the noise-free curve).
pub fn gen_banana_with(n: usize, k: usize, seed: u64, r_scale: f64) -> Result<(Dataset, Generator)> {
    if k == 0 {
        return Err(Error::InvalidArgument("banana needs k >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    let norm: f64 = raw.iter().map(|v| v.abs()).sum();
    let beta = if norm > 0.0 {
        raw.iter().map(|v| v / norm).collect()
    } else {
        vec![1.0 / k as f64; k]
    };
    finish(Generator::Banana(Banana { beta, r_scale }), n, seed, &mut rng)
}

pub fn gen_glasses(n: usize, seed: u64) -> Result<(Dataset, Generator)> {
    gen_glasses_with(n, seed, None)
}

pub fn gen_glasses_with(n: usize, seed: u64, gamma: Option<bool>) -> Result<(Dataset, Generator)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    finish(Generator::Glasses(Glasses { gamma }), n, seed, &mut rng)
}

pub fn gen_star(n: usize, seed: u64, angles: &[f64]) -> Result<(Dataset, Generator)> {
    if angles.is_empty() {
        return Err(Error::InvalidArgument("star needs at least one angle".into()));
    }
    for &a in angles {
        let steps = a / 10.0;
        if !(0.0..=6.0).contains(&steps) || (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("star angle {a} is not one of 0, 10, ..., 60")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    finish(Generator::Star(Star { angles: angles.to_vec() }), n, seed, &mut rng)
}

/// Cholesky factor of a symmetric positive semi-definite matrix; zero pivots
/// are allowed so that degenerate covariances work.
fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let d = a.nrows();
    let mut l = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let diag = a[[j, j]] - (0..j).map(|c| l[[j, c]] * l[[j, c]]).sum::<f64>();
        if diag < -1e-12 {
            return Err(Error::InvalidArgument("covariance is not positive semi-definite".into()));
        }
        let ljj = diag.max(0.0).sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..d {
            let off = a[[i, j]] - (0..j).map(|c| l[[i, c]] * l[[j, c]]).sum::<f64>();
            l[[i, j]] = if ljj > 0.0 { off / ljj } else { 0.0 };
        }
    }
    Ok(l)
}
