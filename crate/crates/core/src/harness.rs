//! Experiment orchestration: task presets and config files, grid sweeps,
//! paired method comparisons and noise-model plots.
//!
//! CSV files are the canonical artifacts. Every SVG is rendered from the
//! rows written to its CSV, so re-reading the CSV and rendering again
//! reproduces the SVG byte for byte. Workers run seeds and grid points in
//! parallel; results are collected in input order and written afterwards by
//! one thread.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::{
    observe, run_bo, run_pilot, running_max, write_trace_csv, BoConfig, BoError, MppiObjective, NoiseMode,
    ObservationRecord, Objective, Scaler, SearchBox,
};
use crate::cmaes::{run_cmaes, CmaConfig, CmaError};
use crate::env::{EnvError, Plant, PlantKind};
use crate::mppi::MppiError;
use crate::noise_model::{NoiseFitOptions, NoiseModel, NoiseModelError, Sample, TrendModel};
use crate::plot::{colour, Figure, Layer};
use crate::seed;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Bo(#[from] BoError),
    #[error(transparent)]
    Cma(#[from] CmaError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Mppi(#[from] MppiError),
    #[error(transparent)]
    NoiseModel(#[from] NoiseModelError),
}

impl HarnessError {
    /// Machine-readable error class.
    pub fn category(&self) -> &'static str {
        match self {
            Self::Config(_)
            | Self::Bo(BoError::Config(_) | BoError::NoiseModeMismatch { .. })
            | Self::Cma(CmaError::Config(_))
            | Self::Env(EnvError::InvalidPlant(_))
            | Self::Mppi(MppiError::InvalidConfig(_)) => "config",
            Self::Io { .. } | Self::Csv(_) => "io",
            Self::Env(_) | Self::Mppi(_) | Self::Bo(BoError::Objective(_)) => "simulation",
            _ => "numerical",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" => 3,
            "simulation" => 4,
            _ => 5,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Per-task MPPI settings, search box and reference optimum `(λ, σ_ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskPreset {
    pub horizon: usize,
    pub rollouts: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub optimum: [f64; 2],
}

pub fn preset(kind: PlantKind) -> TaskPreset {
    match kind {
        PlantKind::Acrobot => TaskPreset {
            horizon: 8,
            rollouts: 30,
            lower: [1e-10, 1e-10],
            upper: [1.2, 10.0],
            optimum: [0.063, 8.421],
        },
        PlantKind::Cartpole => TaskPreset {
            horizon: 10,
            rollouts: 100,
            lower: [1e-10, 1e-10],
            upper: [1.2, 3.0],
            optimum: [0.757, 0.158],
        },
        PlantKind::Pendulum => TaskPreset {
            horizon: 10,
            rollouts: 10,
            lower: [1e-10, 1e-10],
            upper: [1.2, 3.0],
            optimum: [0.694, 1.579],
        },
    }
}

/// One experiment. Scalar fields come first so the TOML form stays flat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: PlantKind,
    pub horizon: usize,
    pub rollouts: usize,
    pub episode_len: usize,
    /// Reference `(λ, σ_ε)`; sweeps hold the other axis here.
    pub optimum: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub search_box: SearchBox,
    pub plant: Plant,
    pub bo: BoConfig,
    pub cmaes: CmaConfig,
}

impl ExperimentConfig {
    pub fn preset(kind: PlantKind) -> Self {
        let p = preset(kind);
        Self {
            task: kind,
            horizon: p.horizon,
            rollouts: p.rollouts,
            episode_len: kind.default_episode_len(),
            optimum: p.optimum.to_vec(),
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            search_box: SearchBox { lower: p.lower.to_vec(), upper: p.upper.to_vec() },
            plant: Plant::from_kind(kind),
            bo: BoConfig::default(),
            cmaes: CmaConfig::default(),
        }
    }

    /// Parses a TOML document. `task` selects the preset; every other key
    /// overrides the preset value at any depth.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        let task = user
            .get("task")
            .and_then(|v| v.as_str())
            .ok_or_else(|| HarnessError::Config("missing string key `task`".into()))?;
        let kind = PlantKind::from_str(task).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(Self::preset(kind)).map_err(|e| HarnessError::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.search_box.validate()?;
        if self.search_box.dim() != 2 {
            return Err(HarnessError::Config("the search box must be two-dimensional (lambda, sigma_eps)".into()));
        }
        if !self.search_box.contains(&self.optimum) {
            return Err(HarnessError::Config(format!("optimum {:?} lies outside the search box", self.optimum)));
        }
        if self.horizon == 0 || self.rollouts == 0 || self.episode_len == 0 {
            return Err(HarnessError::Config("horizon, rollouts and episode_len must be at least 1".into()));
        }
        if self.plant.kind() != self.task {
            return Err(HarnessError::Config(format!("plant dynamics do not match task `{}`", self.task)));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        self.plant.validate()?;
        self.bo.validate()?;
        if !(self.cmaes.sigma0 > 0.0 && self.cmaes.sigma0.is_finite()) || self.cmaes.population < 2 {
            return Err(HarnessError::Config("cmaes needs sigma0 > 0 and population >= 2".into()));
        }
        Ok(())
    }

    pub fn objective(&self) -> MppiObjective {
        MppiObjective {
            plant: self.plant.clone(),
            horizon: self.horizon,
            rollouts: self.rollouts,
            episode_len: self.episode_len,
            bounds: self.search_box.clone(),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::File::create(path).and_then(|mut f| f.write_all(bytes)).map_err(|e| HarnessError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, HarnessError> {
    let f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, HarnessError> {
    let f = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Reader::from_reader(f))
}

fn parse_f64(field: &str) -> Result<f64, HarnessError> {
    field.parse().map_err(|_| HarnessError::Config(format!("`{field}` is not a number")))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let s = if values.len() > 1 { (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, s)
}

// --- grid sweep -----------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    SigmaEps,
}

impl SweepAxis {
    pub fn index(self) -> usize {
        match self {
            Self::Lambda => 0,
            Self::SigmaEps => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::SigmaEps => "sigma_eps",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "sigma_eps" => Ok(Self::SigmaEps),
            _ => Err(HarnessError::Config(format!("unknown sweep axis `{s}`"))),
        }
    }
}

/// Raw-return statistics at one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub x: Vec<f64>,
    /// Episodes entering `mean` and `std`.
    pub episodes: usize,
    pub truncated: usize,
    pub mean: f64,
    pub std: f64,
    pub error: Option<String>,
}

/// `n` equispaced values of `axis` across the box, ends included, with the
/// other coordinates taken from `fixed`. A single point sits at the centre.
pub fn sweep_grid(box_: &SearchBox, axis: usize, fixed: &[f64], n: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = (box_.lower[axis], box_.upper[axis]);
    (0..n)
        .map(|i| {
            let f = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            let mut x = fixed.to_vec();
            x[axis] = if i + 1 == n && n > 1 { hi } else { lo + f * (hi - lo) };
            x
        })
        .collect()
}

/// Observes every grid point with `repeats` episodes. Per-point failures
/// are recorded and the sweep continues.
pub fn run_grid_sweep<O: Objective + ?Sized>(
    objective: &O,
    axis: usize,
    fixed: &[f64],
    grid_size: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>, HarnessError> {
    let box_ = objective.search_box();
    if axis >= box_.dim() || fixed.len() != box_.dim() || !box_.contains(fixed) {
        return Err(HarnessError::Config(format!("sweep axis {axis} with fixed point {fixed:?} does not fit the box")));
    }
    if grid_size == 0 || repeats == 0 {
        return Err(HarnessError::Config("grid size and repeats must be at least 1".into()));
    }
    let identity = Scaler { min: 0.0, max: 100.0 };
    let grid = sweep_grid(&box_, axis, fixed, grid_size);
    Ok(grid
        .into_par_iter()
        .enumerate()
        .map(|(i, x)| match observe(objective, &x, repeats, &identity, i, seed::derive(seed, &[seed::tag("sweep"), i as u64])) {
            Ok(r) => {
                let truncated = r.truncated.iter().filter(|t| **t).count();
                let used: Vec<f64> = if truncated == r.returns.len() {
                    r.returns.clone()
                } else {
                    r.returns.iter().zip(&r.truncated).filter(|(_, t)| !**t).map(|(g, _)| *g).collect()
                };
                let (mean, std) = mean_std(&used);
                SweepPoint { index: i, x, episodes: used.len(), truncated, mean, std, error: None }
            }
            Err(e) => SweepPoint {
                index: i,
                x,
                episodes: 0,
                truncated: 0,
                mean: f64::NAN,
                std: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

/// Mean empirical std over the top tenth of the swept range divided by the
/// mean over the bottom tenth.
pub fn decile_spread_ratio(points: &[SweepPoint], axis: usize) -> f64 {
    let ok: Vec<&SweepPoint> = points.iter().filter(|p| p.error.is_none()).collect();
    let (lo, hi) = ok.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.x[axis]), hi.max(p.x[axis])));
    let avg = |sel: Vec<f64>| sel.iter().sum::<f64>() / sel.len() as f64;
    let top = avg(ok.iter().filter(|p| p.x[axis] >= lo + 0.9 * (hi - lo)).map(|p| p.std).collect());
    let bottom = avg(ok.iter().filter(|p| p.x[axis] <= lo + 0.1 * (hi - lo)).map(|p| p.std).collect());
    top / bottom
}

const SWEEP_FIXED: [&str; 6] = ["episodes", "truncated", "mean", "std", "lower", "upper"];

/// `index,<params>,episodes,truncated,mean,std,lower,upper,error` with
/// `lower`/`upper` = mean ∓ 2 std.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], param_names: &[String], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["index".to_string()];
    header.extend(param_names.iter().cloned());
    header.extend(SWEEP_FIXED.iter().map(|s| s.to_string()));
    header.push("error".into());
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![p.index.to_string()];
        row.extend(p.x.iter().map(|v| v.to_string()));
        row.push(p.episodes.to_string());
        row.push(p.truncated.to_string());
        for v in [p.mean, p.std, p.mean - 2.0 * p.std, p.mean + 2.0 * p.std] {
            row.push(v.to_string());
        }
        row.push(p.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::io(Path::new("<sweep csv>"), e))?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepPoint>, HarnessError> {
    let mut r = csv_reader(path)?;
    let dim = r.headers()?.len() - 2 - SWEEP_FIXED.len();
    let mut out = vec![];
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| parse_f64(&rec[i]);
        let error = &rec[rec.len() - 1];
        out.push(SweepPoint {
            index: f(0)? as usize,
            x: (1..=dim).map(f).collect::<Result<_, _>>()?,
            episodes: f(dim + 1)? as usize,
            truncated: f(dim + 2)? as usize,
            mean: f(dim + 3)?,
            std: f(dim + 4)?,
            error: (!error.is_empty()).then(|| error.to_string()),
        });
    }
    Ok(out)
}

pub fn sweep_svg(points: &[SweepPoint], axis: usize, axis_name: &str) -> String {
    let ok: Vec<&SweepPoint> = points.iter().filter(|p| p.error.is_none()).collect();
    let xs: Vec<f64> = ok.iter().map(|p| p.x[axis]).collect();
    Figure {
        title: format!("Episode return over {axis_name}"),
        x_label: axis_name.into(),
        y_label: "return".into(),
        layers: vec![
            Layer::Band {
                colour: colour(0),
                xs: xs.clone(),
                lower: ok.iter().map(|p| p.mean - 2.0 * p.std).collect(),
                upper: ok.iter().map(|p| p.mean + 2.0 * p.std).collect(),
            },
            Layer::Line { label: "mean".into(), colour: colour(0), xs, ys: ok.iter().map(|p| p.mean).collect() },
        ],
    }
    .render()
}

/// Writes `sweep_<axis>.csv` and `sweep_<axis>.svg` under `dir`.
pub fn export_sweep(dir: &Path, points: &[SweepPoint], param_names: &[String], axis: usize) -> Result<(), HarnessError> {
    create_dir(dir)?;
    let name = &param_names[axis];
    let mut buf = vec![];
    write_sweep_csv(points, param_names, &mut buf)?;
    write_file(&dir.join(format!("sweep_{name}.csv")), &buf)?;
    write_file(&dir.join(format!("sweep_{name}.svg")), sweep_svg(points, axis, name).as_bytes())
}

// --- method comparison ----------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BoHetero,
    BoHomo,
    Cmaes,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::BoHetero, Method::BoHomo, Method::Cmaes];

    pub fn name(self) -> &'static str {
        match self {
            Self::BoHetero => "bo_hetero",
            Self::BoHomo => "bo_homo",
            Self::Cmaes => "cmaes",
        }
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method `{s}`")))
    }
}

/// One method on one seed. Records start with the shared start point.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodRun {
    /// Position in the requested method list.
    pub slot: usize,
    pub method: Method,
    pub seed: u64,
    pub records: Vec<ObservationRecord>,
    /// BO: highest posterior mean among queried points. CMA-ES: final mean.
    pub incumbent: Vec<f64>,
}

impl MethodRun {
    pub fn best_observed(&self) -> Vec<f64> {
        running_max(self.records.iter().map(|r| r.y))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub slot: usize,
    pub method: Method,
    pub seed: u64,
    pub error: String,
}

/// Best-observed curve statistics across seeds at one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub iteration: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl SummaryRow {
    pub fn lower(&self) -> f64 {
        self.mean - 2.0 * self.std
    }

    pub fn upper(&self) -> f64 {
        self.mean + 2.0 * self.std
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub param_names: Vec<String>,
    pub runs: Vec<MethodRun>,
    pub failures: Vec<RunFailure>,
    pub summary: Vec<SummaryRow>,
}

impl Comparison {
    pub fn run(&self, slot: usize, seed: u64) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.slot == slot && r.seed == seed)
    }
}

/// Labels for a method list; repeated methods get a `_<k>` suffix.
pub fn method_labels(methods: &[Method]) -> Vec<String> {
    methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let k = methods[..i].iter().filter(|n| *n == m).count();
            if k == 0 {
                m.name().to_string()
            } else {
                format!("{}_{}", m.name(), k + 1)
            }
        })
        .collect()
}

/// Runs each method on each seed. Per seed, all methods share one pilot
/// (scaler, θ data and noise model), the start point and the observation
/// seeds. Failed runs are reported and left out of the summary.
pub fn run_comparison<O: Objective + ?Sized>(
    objective: &O,
    bo: &BoConfig,
    cma: &CmaConfig,
    methods: &[Method],
    seeds: &[u64],
) -> Result<Comparison, HarnessError> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Config("a comparison needs at least one method and one seed".into()));
    }
    bo.validate()?;
    let per_seed: Vec<(Vec<MethodRun>, Vec<RunFailure>)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut runs = vec![];
            let mut failures = vec![];
            let fail = |slot: usize, method: Method, error: String| RunFailure { slot, method, seed, error };
            let pilot = match run_pilot(objective, bo, seed) {
                Ok(p) => p,
                Err(e) => {
                    let failures = methods.iter().enumerate().map(|(i, m)| fail(i, *m, format!("pilot: {e}"))).collect();
                    return (runs, failures);
                }
            };
            let noise = methods
                .contains(&Method::BoHetero)
                .then(|| pilot.fit_noise_model(&objective.search_box(), bo.noise_degree, &NoiseFitOptions::default()));
            for (slot, &method) in methods.iter().enumerate() {
                let outcome = match method {
                    Method::BoHetero | Method::BoHomo => {
                        let (mode, model) = match (method, &noise) {
                            (Method::BoHetero, Some(Ok((_, m)))) => (NoiseMode::Heteroscedastic, Some(m)),
                            (Method::BoHetero, Some(Err(e))) => {
                                failures.push(fail(slot, method, format!("noise model: {e}")));
                                continue;
                            }
                            _ => (NoiseMode::Homoscedastic, None),
                        };
                        let cfg = BoConfig { mode, ..bo.clone() };
                        run_bo(objective, &cfg, &pilot, model, seed)
                            .map(|r| (r.incumbent.clone(), r.state.records))
                            .map_err(|f| f.error.to_string())
                    }
                    Method::Cmaes => run_cmaes(objective, cma, bo.iterations, bo.repeats, &pilot.scaler, seed)
                        .map(|r| (r.mean, r.records))
                        .map_err(|e| e.to_string()),
                };
                match outcome {
                    Ok((incumbent, records)) => runs.push(MethodRun { slot, method, seed, records, incumbent }),
                    Err(error) => failures.push(fail(slot, method, error)),
                }
            }
            (runs, failures)
        })
        .collect();

    let (runs, failures): (Vec<_>, Vec<_>) = per_seed.into_iter().unzip();
    let runs: Vec<MethodRun> = runs.into_iter().flatten().collect();
    let failures: Vec<RunFailure> = failures.into_iter().flatten().collect();
    let labels = method_labels(methods);
    let mut summary = vec![];
    for (slot, label) in labels.iter().enumerate() {
        let curves: Vec<Vec<f64>> = runs.iter().filter(|r| r.slot == slot).map(|r| r.best_observed()).collect();
        let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
        for t in 0..len {
            let values: Vec<f64> = curves.iter().map(|c| c[t]).collect();
            let (mean, std) = mean_std(&values);
            summary.push(SummaryRow { label: label.clone(), iteration: t, n: values.len(), mean, std });
        }
    }
    Ok(Comparison { labels, param_names: objective.param_names(), runs, failures, summary })
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "iteration", "n", "mean", "std", "lower", "upper"])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.iteration.to_string(),
            r.n.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.lower().to_string(),
            r.upper().to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(Path::new("<summary csv>"), e))?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut r = csv_reader(path)?;
    let mut out = vec![];
    for rec in r.records() {
        let rec = rec?;
        out.push(SummaryRow {
            label: rec[0].to_string(),
            iteration: parse_f64(&rec[1])? as usize,
            n: parse_f64(&rec[2])? as usize,
            mean: parse_f64(&rec[3])?,
            std: parse_f64(&rec[4])?,
        });
    }
    Ok(out)
}

/// Best-observed curves with mean ± 2 std bands, one colour per label in
/// order of first appearance.
pub fn summary_svg(rows: &[SummaryRow]) -> String {
    let mut labels: Vec<&str> = vec![];
    for r in rows {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    let mut layers = vec![];
    for (i, label) in labels.iter().enumerate() {
        let sel: Vec<&SummaryRow> = rows.iter().filter(|r| r.label == *label).collect();
        let xs: Vec<f64> = sel.iter().map(|r| r.iteration as f64).collect();
        layers.push(Layer::Band {
            colour: colour(i),
            xs: xs.clone(),
            lower: sel.iter().map(|r| r.lower()).collect(),
            upper: sel.iter().map(|r| r.upper()).collect(),
        });
        layers.push(Layer::Line { label: label.to_string(), colour: colour(i), xs, ys: sel.iter().map(|r| r.mean).collect() });
    }
    Figure { title: "Best observed scaled return".into(), x_label: "iteration".into(), y_label: "best y".into(), layers }.render()
}

pub fn write_failures_csv<W: Write>(failures: &[RunFailure], labels: &[String], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "seed", "error"])?;
    for f in failures {
        w.write_record([labels[f.slot].as_str(), &f.seed.to_string(), &f.error])?;
    }
    w.flush().map_err(|e| HarnessError::io(Path::new("<failures csv>"), e))?;
    Ok(())
}

/// Writes `traces/<label>_seed<k>.csv`, `summary.csv`, `summary.svg` and
/// `failures.csv` under `dir`.
pub fn export_comparison(dir: &Path, cmp: &Comparison) -> Result<(), HarnessError> {
    let traces = dir.join("traces");
    create_dir(&traces)?;
    for run in &cmp.runs {
        let mut buf = vec![];
        write_trace_csv(&run.records, &cmp.param_names, &mut buf)?;
        write_file(&traces.join(format!("{}_seed{}.csv", cmp.labels[run.slot], run.seed)), &buf)?;
    }
    let mut buf = vec![];
    write_summary_csv(&cmp.summary, &mut buf)?;
    write_file(&dir.join("summary.csv"), &buf)?;
    write_file(&dir.join("summary.svg"), summary_svg(&cmp.summary).as_bytes())?;
    let mut buf = vec![];
    write_failures_csv(&cmp.failures, &cmp.labels, &mut buf)?;
    write_file(&dir.join("failures.csv"), &buf)
}

/// One-sided sign test: `P(W ≥ wins)` for `W ~ Binomial(wins + losses, ½)`.
/// Ties are dropped by the caller.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    let mut log_choose = 0.0f64;
    let mut p = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            p += (log_choose - n as f64 * std::f64::consts::LN_2).exp();
        }
    }
    p.min(1.0)
}

// --- noise-model plot -----------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct NoisePlotRow {
    pub x: f64,
    pub trend: f64,
    pub sigma: f64,
}

impl NoisePlotRow {
    pub fn lower(&self) -> f64 {
        self.trend - 2.0 * self.sigma
    }

    pub fn upper(&self) -> f64 {
        self.trend + 2.0 * self.sigma
    }
}

/// `ĝ` and `σ_ν` on `n` points along `axis`, other inputs at the box centre.
pub fn noise_plot_rows(noise: &NoiseModel, trend: &TrendModel, box_: &SearchBox, axis: usize, n: usize) -> Vec<NoisePlotRow> {
    let centre: Vec<f64> = box_.lower.iter().zip(&box_.upper).map(|(l, h)| 0.5 * (l + h)).collect();
    sweep_grid(box_, axis, &centre, n)
        .into_iter()
        .map(|x| NoisePlotRow { x: x[axis], trend: trend.predict(&x), sigma: noise.noise_std(&x) })
        .collect()
}

pub fn write_noise_grid_csv<W: Write>(rows: &[NoisePlotRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "trend", "sigma", "lower", "upper"])?;
    for r in rows {
        w.write_record([r.x, r.trend, r.sigma, r.lower(), r.upper()].map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(Path::new("<noise csv>"), e))?;
    Ok(())
}

pub fn read_noise_grid_csv(path: &Path) -> Result<Vec<NoisePlotRow>, HarnessError> {
    let mut r = csv_reader(path)?;
    let mut out = vec![];
    for rec in r.records() {
        let rec = rec?;
        out.push(NoisePlotRow { x: parse_f64(&rec[0])?, trend: parse_f64(&rec[1])?, sigma: parse_f64(&rec[2])? });
    }
    Ok(out)
}

pub fn read_points_csv(path: &Path) -> Result<Vec<(f64, f64)>, HarnessError> {
    let mut r = csv_reader(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok((parse_f64(&rec[0])?, parse_f64(&rec[1])?))
        })
        .collect()
}

pub fn noise_svg(rows: &[NoisePlotRow], samples: &[(f64, f64)], axis_name: &str) -> String {
    let xs: Vec<f64> = rows.iter().map(|r| r.x).collect();
    let mut layers = vec![];
    if !samples.is_empty() {
        layers.push(Layer::Points {
            colour: colour(5),
            xs: samples.iter().map(|s| s.0).collect(),
            ys: samples.iter().map(|s| s.1).collect(),
        });
    }
    layers.push(Layer::Band {
        colour: colour(0),
        xs: xs.clone(),
        lower: rows.iter().map(|r| r.lower()).collect(),
        upper: rows.iter().map(|r| r.upper()).collect(),
    });
    layers.push(Layer::Line { label: "trend".into(), colour: colour(1), xs: xs.clone(), ys: rows.iter().map(|r| r.trend).collect() });
    layers.push(Layer::Line { label: "sigma".into(), colour: colour(0), xs, ys: rows.iter().map(|r| r.sigma).collect() });
    Figure { title: "Noise model".into(), x_label: axis_name.into(), y_label: "return".into(), layers }.render()
}

/// Writes `noise_grid.csv`, `noise_samples.csv` and `noise.svg` under
/// `dir`: the trend, `σ_ν` and the `ĝ ± 2σ_ν` band on a grid along `axis`,
/// plus the raw samples projected onto that axis.
pub fn export_noise_plot(
    dir: &Path,
    noise: &NoiseModel,
    trend: &TrendModel,
    samples: &[Sample],
    box_: &SearchBox,
    axis: usize,
    grid: usize,
    axis_name: &str,
) -> Result<Vec<NoisePlotRow>, HarnessError> {
    create_dir(dir)?;
    let rows = noise_plot_rows(noise, trend, box_, axis, grid);
    let mut buf = vec![];
    write_noise_grid_csv(&rows, &mut buf)?;
    write_file(&dir.join("noise_grid.csv"), &buf)?;
    let points: Vec<(f64, f64)> = samples.iter().map(|s| (s.x[axis], s.g)).collect();
    let mut w = csv_writer(&dir.join("noise_samples.csv"))?;
    w.write_record(["x", "g"])?;
    for (x, g) in &points {
        w.write_record([x.to_string(), g.to_string()])?;
    }
    w.flush().map_err(|e| HarnessError::io(&dir.join("noise_samples.csv"), e))?;
    write_file(&dir.join("noise.svg"), noise_svg(&rows, &points, axis_name).as_bytes())?;
    Ok(rows)
}
