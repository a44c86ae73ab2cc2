//! Subcommands and their file outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use vqreg::datasets::Generator;
use vqreg::embedding::embed_forward;
use vqreg::metrics::{calibrate_alpha, evaluate_model, EvalOptions, GroundTruth, MetricReport};
use vqreg::oracle::{build_primal_lp, solve_lp_exact};
use vqreg::solver::TraceRow;
use vqreg::{
    fit_model, rearrange, relaxed_dual_objective, suggested_learning_rate, Dataset, DiscreteCvqf, Embedding, FittedModel,
    ModelKind, QuantileGrid, SolverConfig,
};

use crate::artifact::ModelArtifact;
use crate::config::{ConfigMap, DataSource, LearningRate, Origin, RunConfig};
use crate::plot;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "vqreg", version, about = "Vector quantile regression via the relaxed OT dual")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write an SVG scatter plot to this path.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// `key=value` overrides applied after the configuration file.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and write `<out>/data.csv`.
    Gen(Common),
    /// Fit a model; writes `<out>/model.vqr` and `<out>/trace.csv`.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Also solve the exact LP (tiny problems only) and write `<out>/oracle.json`.
        #[arg(long)]
        oracle: bool,
    },
    /// Tabulate the CVQF of a saved model at `x`; writes `<out>/cvqf.csv`.
    Cvqf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vmr: bool,
    },
    /// Apply vector monotone rearrangement to `input`; writes `<out>/cvqf_vmr.csv`.
    Rearrange(Common),
    /// Score a saved model against its generator; writes `<out>/report.json`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vmr: bool,
    },
    /// Run every cell of the declared `sweep.*` grid; writes `<out>/results.jsonl`.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vmr: bool,
    },
}

fn load_map(common: &Common) -> Result<ConfigMap, CliError> {
    let mut map = match &common.config {
        Some(p) => ConfigMap::parse_file(p)?,
        None => ConfigMap::default(),
    };
    map.apply_overrides(&common.overrides)?;
    Ok(map)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(contents).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

pub fn load_dataset(rc: &RunConfig) -> Result<(Dataset, Option<Generator>), CliError> {
    match &rc.data {
        DataSource::Generated(spec) => {
            let (ds, gen) = spec.build()?;
            Ok((ds, Some(gen)))
        }
        DataSource::Csv(path) => {
            let f = File::open(path).map_err(|e| io_err(path, e))?;
            let name = path.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
            let ds = Dataset::read_csv(f, name).map_err(|e| match e {
                vqreg::Error::Csv(m) => CliError::Config(format!("{}: {m}", path.display())),
                other => other.into(),
            })?;
            let gen = match &rc.generator {
                Some(g) => Some(g.build()?.1),
                None => None,
            };
            Ok((ds, gen))
        }
    }
}

/// Solver settings with batch sizes clamped and an automatic step size resolved.
pub fn resolve_solver(rc: &RunConfig, dataset: &Dataset) -> Result<SolverConfig, CliError> {
    let levels = match rc.kind {
        ModelKind::Separable => rc.t,
        _ => rc.t.checked_pow(dataset.d() as u32).unwrap_or(usize::MAX),
    };
    let mut cfg = rc.solver.clamped_to(dataset.len(), levels);
    if rc.learning_rate == LearningRate::Auto {
        let features = match (&rc.embedding, rc.kind) {
            (Some(spec), ModelKind::Nonlinear | ModelKind::Separable) => {
                let mut spec = spec.clone();
                spec.input_dim = dataset.k();
                let mut emb = Embedding::init(spec)?;
                emb.fit_standardization(dataset.x().view());
                embed_forward(&emb, dataset.x().view())?.0
            }
            _ => dataset.x().clone(),
        };
        cfg.learning_rate = suggested_learning_rate(cfg.epsilon, cfg.batch_n, cfg.batch_t, features.view());
    }
    Ok(cfg)
}

fn embedding_for(rc: &RunConfig, dataset: &Dataset) -> Option<vqreg::EmbeddingSpec> {
    match rc.kind {
        ModelKind::Linear => None,
        _ => rc.embedding.clone().map(|mut s| {
            s.input_dim = dataset.k();
            s
        }),
    }
}

/// Fit the configured model; returns the artifact and the traces.
pub fn fit_configured(rc: &RunConfig, map: &ConfigMap, dataset: &Dataset) -> Result<(ModelArtifact, Vec<Vec<TraceRow>>), CliError> {
    let cfg = resolve_solver(rc, dataset)?;
    let spec = embedding_for(rc, dataset);
    let fit = fit_model(dataset, rc.t, rc.kind, &cfg, spec.as_ref())?;
    let final_loss = fit.traces.iter().filter_map(|t| t.last().map(|r| r.running_mean)).collect();
    let artifact = ModelArtifact::new(fit.model, rc.decoder, map.canonical(), final_loss);
    Ok((artifact, fit.traces))
}

fn trace_csv(traces: &[Vec<TraceRow>]) -> String {
    let mut s = String::from("component,iteration,loss,running_mean,learning_rate\n");
    for (c, trace) in traces.iter().enumerate() {
        for r in trace {
            s.push_str(&format!("{c},{},{},{},{}\n", r.iteration, r.loss, r.running_mean, r.learning_rate));
        }
    }
    s
}

/// `Q̂(·; x)` for a model, optionally rearranged.
pub fn model_cvqf(artifact: &ModelArtifact, grid: &Arc<QuantileGrid>, x: &[f64], vmr: bool) -> vqreg::Result<DiscreteCvqf> {
    let q = artifact.model.cvqf(x, grid, artifact.decoder)?;
    if vmr {
        rearrange(&q)
    } else {
        Ok(q)
    }
}

pub fn cvqf_csv(q: &DiscreteCvqf) -> String {
    let d = q.grid().dim();
    let mut s = String::new();
    if let Some(x) = q.x() {
        let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        s.push_str(&format!("# x={}\n", xs.join(",")));
    }
    let header: Vec<String> = (0..d).map(|i| format!("u_{i}")).chain((0..d).map(|i| format!("q_{i}"))).collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for (u, v) in q.grid().levels().rows().into_iter().zip(q.values().rows()) {
        let fields: Vec<String> = u.iter().chain(v.iter()).map(|v| v.to_string()).collect();
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_cvqf_csv(text: &str, path: &Path) -> Result<DiscreteCvqf, CliError> {
    let bad = |line: usize, m: String| CliError::Config(format!("{}:{line}: {m}", path.display()));
    let mut x = None;
    let mut header: Option<usize> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some(v) = c.trim().strip_prefix("x=") {
                let parsed: Result<Vec<f64>, _> = v.split(',').map(|p| p.trim().parse::<f64>()).collect();
                x = Some(parsed.map_err(|_| bad(i + 1, format!("bad covariate list '{v}'")))?);
            }
            continue;
        }
        match header {
            None => {
                let cols: Vec<&str> = line.split(',').collect();
                let d = cols.len() / 2;
                let want: Vec<String> = (0..d).map(|c| format!("u_{c}")).chain((0..d).map(|c| format!("q_{c}"))).collect();
                if cols.len() % 2 != 0 || d == 0 || cols.iter().zip(&want).any(|(a, b)| a.trim() != b) {
                    return Err(bad(i + 1, format!("expected header {}", want.join(","))));
                }
                header = Some(d);
            }
            Some(d) => {
                let vals: Result<Vec<f64>, _> = line.split(',').map(|p| p.trim().parse::<f64>()).collect();
                let vals = vals.map_err(|_| bad(i + 1, "non-numeric field".into()))?;
                if vals.len() != 2 * d {
                    return Err(bad(i + 1, format!("expected {} fields, found {}", 2 * d, vals.len())));
                }
                rows.push(vals);
            }
        }
    }
    let d = header.ok_or_else(|| bad(1, "missing header".into()))?;
    let n = rows.len();
    let t = (n as f64).powf(1.0 / d as f64).round() as usize;
    if t == 0 || t.checked_pow(d as u32) != Some(n) {
        return Err(bad(1, format!("{n} rows do not form a T^{d} grid")));
    }
    let grid = Arc::new(QuantileGrid::new(t, d)?);
    let mut values = ndarray::Array2::zeros((n, d));
    for (i, r) in rows.iter().enumerate() {
        for c in 0..d {
            if (r[c] - grid.levels()[[i, c]]).abs() > 1e-9 {
                return Err(bad(i + 1, format!("row {i} level does not match the grid ordering")));
            }
            values[[i, c]] = r[d + c];
        }
    }
    Ok(DiscreteCvqf::new(grid, values, x)?)
}

fn generator_of(rc: &RunConfig, gen: Option<Generator>) -> Result<Generator, CliError> {
    gen.ok_or_else(|| CliError::Config("evaluation needs data.generator for ground truth".into()))
        .or_else(|e| match &rc.generator {
            Some(g) => Ok(g.build()?.1),
            None => Err(e),
        })
}

/// Evaluate `artifact` against `gen`, calibrating α first when a nominal
/// coverage is configured.
pub fn evaluate(rc: &RunConfig, artifact: &ModelArtifact, gen: &Generator, vmr: bool) -> Result<MetricReport, CliError> {
    let grid = artifact.model.grid()?;
    let provider = |x: &[f64]| model_cvqf(artifact, &grid, x, vmr);
    let mut opts: EvalOptions = rc.eval.clone();
    if let Some(nominal) = rc.nominal_coverage {
        let cal_seed = opts.seed.wrapping_add(31);
        let calibration = gen.dataset(rc.calibration_n, cal_seed)?;
        let cal = calibrate_alpha(provider, &calibration, nominal, rc.coverage_tolerance)?;
        opts.alpha = Some(cal.alpha);
    }
    let truth = GroundTruth::build(gen, &grid, &opts)?;
    Ok(evaluate_model(provider, &truth, &opts)?)
}

fn report_rss() {
    if std::env::var_os("VQREG_REPORT_RSS").is_none() {
        return;
    }
    if let Ok(status) = std::fs::read_to_string("/proc/self/status") {
        if let Some(line) = status.lines().find(|l| l.starts_with("VmHWM:")) {
            let kb = line.split_whitespace().nth(1).unwrap_or("0");
            eprintln!("peak_rss_kb={kb}");
        }
    }
}

fn worker_count() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("VQREG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => n.min(available.max(n)),
        _ => available,
    }
}

fn sweep_cells(map: &ConfigMap) -> Result<Vec<Vec<(String, String)>>, CliError> {
    let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for key in map.sweeps() {
        let entry = map.get(key).expect("declared sweep key");
        let values: Vec<&str> = entry.value.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(CliError::Config(format!("{}: field '{key}': empty sweep", entry.origin)));
        }
        let base = key.trim_start_matches("sweep.").to_string();
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for v in &values {
                let mut c = cell.clone();
                c.push((base.clone(), v.to_string()));
                next.push(c);
            }
        }
        cells = next;
    }
    Ok(cells)
}

fn run_cell(map: &ConfigMap, cell: &[(String, String)], index: usize, vmr: bool) -> Result<Value, CliError> {
    let mut m = map.clone();
    for (k, v) in cell {
        m.set(k, v, Origin::Sweep)?;
    }
    let rc = RunConfig::from_map(&m)?;
    let (dataset, gen) = load_dataset(&rc)?;
    let gen = generator_of(&rc, gen)?;
    let (artifact, _) = fit_configured(&rc, &m, &dataset)?;
    let report = evaluate(&rc, &artifact, &gen, vmr)?;
    let params: serde_json::Map<String, Value> = cell.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
    Ok(json!({
        "cell": index,
        "params": params,
        "config_fingerprint": artifact.config_fingerprint,
        "final_loss": artifact.final_loss,
        "report": report,
    }))
}

fn experiment(map: &ConfigMap, out: &Path, vmr: bool) -> Result<(), CliError> {
    let cells = sweep_cells(map)?;
    let results: Vec<Mutex<Option<Result<Value, CliError>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = worker_count().min(cells.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let r = run_cell(map, &cells[i], i, vmr);
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    let mut text = String::new();
    for slot in results {
        let value = slot.into_inner().expect("result slot").expect("every cell ran")?;
        text.push_str(&serde_json::to_string(&value).map_err(|e| CliError::Io(e.to_string()))?);
        text.push('\n');
    }
    write_file(&out.join("results.jsonl"), text.as_bytes())
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf, CliError> {
    p.as_ref().ok_or_else(|| CliError::Config(format!("missing required field '{key}'")))
}

fn oracle_report(rc: &RunConfig, dataset: &Dataset, artifact: &ModelArtifact) -> Result<Value, CliError> {
    let FittedModel::Joint { solution } = &artifact.model else {
        return Err(CliError::Config("--oracle needs a joint (linear or nonlinear) model".into()));
    };
    let grid = QuantileGrid::new(rc.t, dataset.d())?;
    let lp = build_primal_lp(dataset, &grid)?;
    let exact = solve_lp_exact(&lp)?;
    let dual = relaxed_dual_objective(
        &solution.psi,
        &solution.beta,
        dataset,
        &grid,
        solution.epsilon,
        solution.embedding.as_ref(),
    )?;
    Ok(json!({
        "lp_value": exact.value,
        "relaxed_dual_value": dual,
        "relative_gap": (dual - exact.value).abs() / exact.value.abs().max(1e-300),
        "dropped_rows": exact.dropped_rows,
    }))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let result = dispatch(cli.command);
    report_rss();
    result
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(common) => {
            let map = load_map(&common)?;
            let rc = RunConfig::from_map(&map)?;
            let (ds, _) = load_dataset(&rc)?;
            let path = rc.out.join("data.csv");
            let mut w = create(&path)?;
            ds.write_csv(&mut w)?;
            w.flush().map_err(|e| io_err(&path, e))?;
            if let Some(p) = &common.plot {
                write_file(p, plot::dataset_svg(&ds).as_bytes())?;
            }
            Ok(())
        }
        Command::Fit { common, oracle } => {
            let map = load_map(&common)?;
            let rc = RunConfig::from_map(&map)?;
            let (ds, _) = load_dataset(&rc)?;
            let (artifact, traces) = fit_configured(&rc, &map, &ds)?;
            write_file(&rc.out.join("model.vqr"), &artifact.to_bytes()?)?;
            write_file(&rc.out.join("trace.csv"), trace_csv(&traces).as_bytes())?;
            if oracle {
                let report = oracle_report(&rc, &ds, &artifact)?;
                let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))? + "\n";
                write_file(&rc.out.join("oracle.json"), text.as_bytes())?;
            }
            Ok(())
        }
        Command::Cvqf { common, vmr } => {
            let map = load_map(&common)?;
            let rc = RunConfig::from_map(&map)?;
            let artifact = ModelArtifact::load(require(&rc.model, "model")?)?;
            let grid = artifact.model.grid()?;
            let q = model_cvqf(&artifact, &grid, &rc.x, vmr)?;
            write_file(&rc.out.join("cvqf.csv"), cvqf_csv(&q).as_bytes())?;
            if let Some(p) = &common.plot {
                write_file(p, plot::cvqf_svg(&q)?.as_bytes())?;
            }
            Ok(())
        }
        Command::Rearrange(common) => {
            let map = load_map(&common)?;
            let rc = RunConfig::from_map(&map)?;
            let input = require(&rc.input, "input")?;
            let text = std::fs::read_to_string(input).map_err(|e| io_err(input, e))?;
            let q = rearrange(&parse_cvqf_csv(&text, input)?)?;
            write_file(&rc.out.join("cvqf_vmr.csv"), cvqf_csv(&q).as_bytes())?;
            if let Some(p) = &common.plot {
                write_file(p, plot::cvqf_svg(&q)?.as_bytes())?;
            }
            Ok(())
        }
        Command::Eval { common, vmr } => {
            let map = load_map(&common)?;
            let rc = RunConfig::from_map(&map)?;
            let artifact = ModelArtifact::load(require(&rc.model, "model")?)?;
            let gen = generator_of(&rc, None)?;
            let report = evaluate(&rc, &artifact, &gen, vmr)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))? + "\n";
            write_file(&rc.out.join("report.json"), text.as_bytes())
        }
        Command::Experiment { common, vmr } => {
            let map = load_map(&common)?;
            // validates the base configuration before any cell runs
            let rc = RunConfig::from_map(&map)?;
            experiment(&map, &rc.out, vmr)
        }
    }
}
