//! Flat `section.key = value` configuration.
//!
//! A file holds one assignment per line; `#` starts a comment. Command-line
//! `key=value` arguments override the file. Every value remembers where it
//! came from so errors can name the line and field.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use vqreg::datasets::{default_angles, GeneratorName, GeneratorSpec};
use vqreg::metrics::EvalOptions;
use vqreg::{CvqfDecoder, EmbeddingSpec, ModelKind, SolverConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File { path: PathBuf, line: usize },
    Argument,
    Sweep,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{}:{line}", path.display()),
            Origin::Argument => write!(f, "command line"),
            Origin::Sweep => write!(f, "sweep cell"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub value: String,
    pub origin: Origin,
}

/// Keys naming files or query points of one invocation.
const INVOCATION_KEYS: [&str; 4] = ["out", "model", "input", "x"];

/// Keys a configuration may set. `sweep.<key>` is accepted for any of them.
pub const KNOWN_KEYS: &[&str] = &[
    "data.input",
    "data.generator",
    "data.n",
    "data.k",
    "data.d",
    "data.seed",
    "data.angles",
    "data.covariance",
    "grid.t",
    "model.kind",
    "model.decoder",
    "solver.epsilon",
    "solver.iterations",
    "solver.learning_rate",
    "solver.lr_decay_factor",
    "solver.lr_patience_iters",
    "solver.lr_improvement_threshold",
    "solver.batch_n",
    "solver.batch_t",
    "solver.seed",
    "embedding.hidden",
    "embedding.output",
    "embedding.skip",
    "embedding.seed",
    "embedding.standardize",
    "embedding.trainable",
    "eval.l",
    "eval.m",
    "eval.bins",
    "eval.sigma",
    "eval.seed",
    "eval.qfd",
    "eval.proxy_epsilon",
    "eval.proxy_iterations",
    "eval.entropy",
    "eval.alpha",
    "eval.test_n",
    "eval.nominal_coverage",
    "eval.coverage_tolerance",
    "eval.calibration_n",
    "out",
    "model",
    "input",
    "x",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, Entry>,
    /// Sweep keys in declaration order.
    sweeps: Vec<String>,
}

fn check_key(key: &str, origin: &Origin) -> Result<(), CliError> {
    let base = key.strip_prefix("sweep.").unwrap_or(key);
    if KNOWN_KEYS.contains(&base) {
        Ok(())
    } else {
        Err(CliError::Config(format!("{origin}: unknown field '{key}'")))
    }
}

impl ConfigMap {
    pub fn parse_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_text(&text, path)
    }

    pub fn parse_text(text: &str, path: &Path) -> Result<Self, CliError> {
        let mut map = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let origin = Origin::File {
                path: path.to_path_buf(),
                line: i + 1,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}: expected 'key = value', got '{line}'")))?;
            map.set(k.trim(), v.trim(), origin)?;
        }
        Ok(map)
    }

    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), CliError> {
        check_key(key, &origin)?;
        if key.starts_with("sweep.") && !self.sweeps.iter().any(|s| s == key) {
            self.sweeps.push(key.to_string());
        }
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                origin,
            },
        );
        Ok(())
    }

    /// Apply `key=value` command-line overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("command line: expected key=value, got '{o}'")))?;
            self.set(k.trim(), v.trim(), Origin::Argument)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn sweeps(&self) -> &[String] {
        &self.sweeps
    }

    /// Canonical text of the entries that determine a fit: sorted `key=value`
    /// lines without sweeps and without the per-invocation paths.
    pub fn canonical(&self) -> String {
        self.entries
            .iter()
            .filter(|(k, _)| !k.starts_with("sweep.") && !INVOCATION_KEYS.contains(&k.as_str()))
            .map(|(k, e)| format!("{k}={}\n", e.value))
            .collect()
    }

    fn typed<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| {
                CliError::Config(format!("{}: field '{key}': expected {what}, got '{}'", e.origin, e.value))
            }),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        self.typed(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        self.typed(key, "a non-negative integer")
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.typed(key, "a number")
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        self.typed(key, "true or false")
    }

    pub fn string(&self, key: &str) -> Option<String> {
        self.entries.get(key).map(|e| e.value.clone())
    }

    pub fn list<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) if e.value.trim().is_empty() => Ok(Some(Vec::new())),
            Some(e) => e
                .value
                .split(',')
                .map(|p| p.trim().parse::<T>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| {
                    CliError::Config(format!(
                        "{}: field '{key}': expected a comma-separated list of {what}, got '{}'",
                        e.origin, e.value
                    ))
                }),
        }
    }

    fn field_error(&self, key: &str, msg: impl fmt::Display) -> CliError {
        match self.entries.get(key) {
            Some(e) => CliError::Config(format!("{}: field '{key}': {msg}", e.origin)),
            None => CliError::Config(format!("field '{key}': {msg}")),
        }
    }
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Generated(GeneratorSpec),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LearningRate {
    Auto,
    Fixed(f64),
}

/// Typed view of a [`ConfigMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    /// The generator to evaluate against (present when data are generated).
    pub generator: Option<GeneratorSpec>,
    pub t: usize,
    pub kind: ModelKind,
    pub decoder: CvqfDecoder,
    pub solver: SolverConfig,
    pub learning_rate: LearningRate,
    pub embedding: Option<EmbeddingSpec>,
    pub eval: EvalOptions,
    pub qfd_config: SolverConfig,
    pub nominal_coverage: Option<f64>,
    pub coverage_tolerance: f64,
    pub calibration_n: usize,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub x: Vec<f64>,
}

/// Default KDE bandwidth per generator.
pub fn default_sigma(name: Option<GeneratorName>) -> f64 {
    match name {
        Some(GeneratorName::Banana) => 0.1,
        Some(GeneratorName::Star) => 0.035,
        _ => 0.05,
    }
}

impl RunConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self, CliError> {
        let generator = match map.string("data.generator") {
            Some(name) => {
                let name: GeneratorName = name
                    .parse()
                    .map_err(|e: vqreg::Error| map.field_error("data.generator", e))?;
                let mut spec = GeneratorSpec::new(name, map.usize("data.n")?.unwrap_or(1000), map.u64("data.seed")?.unwrap_or(0));
                if let Some(k) = map.usize("data.k")? {
                    spec.k = k;
                }
                if let Some(d) = map.usize("data.d")? {
                    spec.d = d;
                }
                spec.angles = map.list("data.angles", "numbers")?.unwrap_or_else(default_angles);
                spec.covariance = map.list("data.covariance", "numbers")?;
                Some(spec)
            }
            None => None,
        };
        let data = match (map.string("data.input"), &generator) {
            (Some(p), _) => DataSource::Csv(PathBuf::from(p)),
            (None, Some(g)) => DataSource::Generated(g.clone()),
            (None, None) => DataSource::Generated(GeneratorSpec::new(GeneratorName::Mvn, 1000, 0)),
        };

        let t = map.usize("grid.t")?.unwrap_or(20);
        let kind = match map.string("model.kind") {
            Some(s) => s.parse().map_err(|e: vqreg::Error| map.field_error("model.kind", e))?,
            None => ModelKind::Linear,
        };
        let decoder = match map.string("model.decoder").as_deref() {
            None | Some("barycentric") => CvqfDecoder::Barycentric,
            Some("finite_difference") | Some("fd") => CvqfDecoder::FiniteDifference,
            Some(other) => {
                return Err(map.field_error(
                    "model.decoder",
                    format!("expected barycentric or finite_difference, got '{other}'"),
                ))
            }
        };

        let d = SolverConfig::default();
        let learning_rate = match map.string("solver.learning_rate").as_deref() {
            None | Some("auto") => LearningRate::Auto,
            Some(_) => LearningRate::Fixed(map.f64("solver.learning_rate")?.unwrap_or(d.learning_rate)),
        };
        let solver = SolverConfig {
            epsilon: map.f64("solver.epsilon")?.unwrap_or(d.epsilon),
            iterations: map.usize("solver.iterations")?.unwrap_or(d.iterations),
            learning_rate: match learning_rate {
                LearningRate::Fixed(v) => v,
                LearningRate::Auto => d.learning_rate,
            },
            lr_decay_factor: map.f64("solver.lr_decay_factor")?.unwrap_or(d.lr_decay_factor),
            lr_patience_iters: map.usize("solver.lr_patience_iters")?.unwrap_or(d.lr_patience_iters),
            lr_improvement_threshold: map.f64("solver.lr_improvement_threshold")?.unwrap_or(d.lr_improvement_threshold),
            batch_n: map.usize("solver.batch_n")?.unwrap_or(d.batch_n),
            batch_t: map.usize("solver.batch_t")?.unwrap_or(d.batch_t),
            seed: map.u64("solver.seed")?.unwrap_or(d.seed),
        };
        solver.validate().map_err(|e| {
            let msg = e.to_string();
            let field = ["lr_decay_factor", "lr_patience_iters", "lr_improvement_threshold", "learning_rate", "epsilon", "iterations"]
                .into_iter()
                .find(|f| msg.contains(f))
                .unwrap_or(if solver.batch_n == 0 { "batch_n" } else { "batch_t" });
            map.field_error(&format!("solver.{field}"), msg)
        })?;

        let hidden: Option<Vec<usize>> = map.list("embedding.hidden", "integers")?;
        let embedding = match (hidden, map.usize("embedding.output")?) {
            (None, None) => None,
            (hidden, output) => {
                // without an explicit output width the last listed layer is the output
                let mut hidden = hidden.unwrap_or_default();
                let k = generator.as_ref().map_or(1, |g| g.k);
                let output = match output {
                    Some(o) => o,
                    None => hidden.pop().unwrap_or(k),
                };
                let mut spec = EmbeddingSpec::new(k, hidden, output);
                if let Some(v) = map.bool("embedding.skip")? {
                    spec.skip_connections = v;
                }
                if let Some(v) = map.u64("embedding.seed")? {
                    spec.seed = v;
                }
                if let Some(v) = map.bool("embedding.standardize")? {
                    spec.standardize = v;
                }
                if let Some(v) = map.bool("embedding.trainable")? {
                    spec.trainable = v;
                }
                Some(spec)
            }
        };
        if kind == ModelKind::Nonlinear && embedding.is_none() {
            return Err(map.field_error("model.kind", "nonlinear models need embedding.hidden or embedding.output"));
        }

        let ed = EvalOptions::default();
        let proxy_eps = map.f64("eval.proxy_epsilon")?.unwrap_or(solver.epsilon);
        let qfd_config = SolverConfig {
            epsilon: proxy_eps,
            iterations: map.usize("eval.proxy_iterations")?.unwrap_or(solver.iterations),
            batch_n: usize::MAX,
            batch_t: usize::MAX,
            ..solver.clone()
        };
        let eval = EvalOptions {
            l: map.usize("eval.l")?.unwrap_or(ed.l),
            m: map.usize("eval.m")?.unwrap_or(ed.m),
            bins: map.usize("eval.bins")?.unwrap_or(ed.bins),
            sigma: map.f64("eval.sigma")?.unwrap_or(default_sigma(generator.as_ref().map(|g| g.name))),
            seed: map.u64("eval.seed")?.unwrap_or(ed.seed),
            proxy: if map.bool("eval.qfd")?.unwrap_or(false) {
                Some(qfd_config.clone())
            } else {
                None
            },
            entropy: map.bool("eval.entropy")?.unwrap_or(ed.entropy),
            alpha: map.f64("eval.alpha")?,
            test_n: map.usize("eval.test_n")?.unwrap_or(ed.test_n),
        };
        if eval.l == 0 || eval.m == 0 {
            return Err(map.field_error("eval.l", "eval.l and eval.m must be positive"));
        }

        Ok(Self {
            data,
            generator,
            t,
            kind,
            decoder,
            solver,
            learning_rate,
            embedding,
            eval,
            qfd_config,
            nominal_coverage: map.f64("eval.nominal_coverage")?,
            coverage_tolerance: map.f64("eval.coverage_tolerance")?.unwrap_or(0.0),
            calibration_n: map.usize("eval.calibration_n")?.unwrap_or(1000),
            out: PathBuf::from(map.string("out").unwrap_or_else(|| "out".into())),
            model: map.string("model").map(PathBuf::from),
            input: map.string("input").map(PathBuf::from),
            x: map.list("x", "numbers")?.unwrap_or_default(),
        })
    }
}
