//! Bayesian optimisation of controller hyper-parameters with a UCB
//! acquisition and a homoscedastic or heteroscedastic GP.
//!
//! A run has three phases:
//! 1. a Sobol pilot sample, used to fix the reward scaling, the noise model
//!    and the GP hyper-parameters;
//! 2. one observation at a predefined start point (the lower box corner);
//! 3. `iterations` rounds of: condition the GP on the observations so far,
//!    maximise UCB, observe the chosen point.
//!
//! The pilot is not part of the GP dataset used for acquisition.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sobol::params::JoeKuoD6;
use sobol::Sobol;
use thiserror::Error;

use crate::env::Plant;
use crate::gp::{fit_hyperparams, FitOptions, GpDataset, GpError, GpModel, Theta};
use crate::mppi::{run_episode, MppiConfig, MppiError};
use crate::noise_model::{fit_noise, fit_trend, FeatureMap, NoiseFitOptions, NoiseModel, NoiseModelError, Sample, TrendModel};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("objective evaluation failed: {0}")]
    Objective(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    NoiseModel(#[from] NoiseModelError),
    #[error("{mode:?} mode {detail}")]
    NoiseModeMismatch { mode: NoiseMode, detail: &'static str },
}

impl From<MppiError> for BoError {
    fn from(e: MppiError) -> Self {
        Self::Objective(e.to_string())
    }
}

/// A failed run together with the observations made before the failure.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{error} (after {} observations)", records.len())]
pub struct BoFailure {
    pub error: BoError,
    pub records: Vec<ObservationRecord>,
}

/// Axis-aligned search box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SearchBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, BoError> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), BoError> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(BoError::Config("search box bounds must be non-empty and of equal length".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, h)| !(h > l) || !l.is_finite() || !h.is_finite()) {
            return Err(BoError::Config(format!("empty search box {:?}..{:?}", self.lower, self.upper)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, h))| v >= l && v <= h)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
    }

    /// Maps into `[0, 1]^d`.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, h))| (v - l) / (h - l)).collect()
    }

    /// Inverse of [`normalize`](Self::normalize), clamped to the box.
    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, h))| (l + v * (h - l)).clamp(*l, *h))
            .collect()
    }

    /// The predefined start point for comparison runs.
    pub fn worst_corner(&self) -> Vec<f64> {
        self.lower.clone()
    }

    pub fn polynomial_map(&self, degree: usize) -> FeatureMap {
        FeatureMap::Polynomial { degree, lower: self.lower.clone(), upper: self.upper.clone() }
    }
}

/// The first `n` points of the Sobol sequence in `box_`, skipping the origin.
pub fn sobol_points(box_: &SearchBox, n: usize) -> Vec<Vec<f64>> {
    let params = JoeKuoD6::minimal();
    Sobol::<f64>::new(box_.dim(), &params).skip(1).take(n).map(|u| box_.denormalize(&u)).collect()
}

/// Outcome of one episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub ret: f64,
    pub truncated: bool,
}

/// A noisy black box to be maximised.
pub trait Objective: Sync {
    fn search_box(&self) -> SearchBox;
    /// Column names of the design variables.
    fn param_names(&self) -> Vec<String>;
    /// Runs `repeats` independent episodes at `x`. Must be a pure function
    /// of `(x, repeats, seed)`.
    fn evaluate(&self, x: &[f64], repeats: usize, seed: u64) -> Result<Vec<EpisodeOutcome>, BoError>;
}

/// MPPI on a plant with `x = (λ, σ_ε)`.
#[derive(Clone, Debug)]
pub struct MppiObjective {
    pub plant: Plant,
    pub horizon: usize,
    pub rollouts: usize,
    pub episode_len: usize,
    pub bounds: SearchBox,
}

impl Objective for MppiObjective {
    fn search_box(&self) -> SearchBox {
        self.bounds.clone()
    }

    fn param_names(&self) -> Vec<String> {
        vec!["lambda".into(), "sigma_eps".into()]
    }

    fn evaluate(&self, x: &[f64], repeats: usize, seed: u64) -> Result<Vec<EpisodeOutcome>, BoError> {
        if x.len() != 2 {
            return Err(BoError::Config(format!("MPPI objective takes (lambda, sigma_eps), got {x:?}")));
        }
        let cfg = MppiConfig::new(x[0], x[1], self.horizon, self.rollouts);
        cfg.validate()?;
        (0..repeats as u64)
            .into_par_iter()
            .map(|j| {
                let ep = run_episode(&self.plant, &cfg, self.episode_len, &mut seed::stream(seed, &[j]))?;
                Ok(EpisodeOutcome { ret: ep.ret, truncated: ep.truncated })
            })
            .collect()
    }
}

/// Affine map of raw returns onto `[0, 100]` fixed from the pilot range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: f64,
    pub max: f64,
}

impl Scaler {
    pub fn from_returns(values: impl IntoIterator<Item = f64>) -> Self {
        let (min, max) = values
            .into_iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if min.is_finite() {
            Self { min, max }
        } else {
            Self { min: 0.0, max: 100.0 }
        }
    }

    pub fn scale(&self, g: f64) -> f64 {
        if self.max > self.min {
            100.0 * (g - self.min) / (self.max - self.min)
        } else {
            g - self.min + 50.0
        }
    }

    pub fn unscale(&self, y: f64) -> f64 {
        if self.max > self.min {
            self.min + y * (self.max - self.min) / 100.0
        } else {
            y + self.min - 50.0
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Homoscedastic,
    Heteroscedastic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoConfig {
    /// UCB exploration weight κ.
    pub kappa: f64,
    /// Number of acquisition-driven observations n_BO.
    pub iterations: usize,
    /// Episodes averaged per observation n_r.
    pub repeats: usize,
    pub pilot_size: usize,
    pub acquisition_starts: usize,
    pub mode: NoiseMode,
    /// Constant GP prior mean on the scaled reward.
    pub prior_mean: f64,
    /// Polynomial degree of the fitted noise model.
    pub noise_degree: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            kappa: 1.2,
            iterations: 30,
            repeats: 5,
            pilot_size: 20,
            acquisition_starts: 32,
            mode: NoiseMode::Homoscedastic,
            prior_mean: 50.0,
            noise_degree: 10,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<(), BoError> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(BoError::Config(format!("kappa must be finite and non-negative, got {}", self.kappa)));
        }
        if self.repeats == 0 || self.acquisition_starts == 0 {
            return Err(BoError::Config("repeats and acquisition_starts must be at least 1".into()));
        }
        if self.pilot_size < 2 {
            return Err(BoError::Config("the pilot needs at least 2 points".into()));
        }
        Ok(())
    }
}

/// One averaged observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    /// 0 for the start point, then 1..=n_BO.
    pub iteration: usize,
    pub x: Vec<f64>,
    /// Raw per-episode returns g_j.
    pub returns: Vec<f64>,
    pub truncated: Vec<bool>,
    /// Mean scaled return over completed episodes.
    pub y: f64,
    /// Posterior mean and standard deviation at `x` before observing it.
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
}

/// Runs `cfg.repeats` episodes at `x` and averages the scaled returns of the
/// episodes that were not truncated (all of them if every episode was).
pub fn observe<O: Objective + ?Sized>(
    objective: &O,
    x: &[f64],
    repeats: usize,
    scaler: &Scaler,
    iteration: usize,
    seed: u64,
) -> Result<ObservationRecord, BoError> {
    if !objective.search_box().contains(x) {
        return Err(BoError::Config(format!("query {x:?} is outside the search box")));
    }
    let outcomes = objective.evaluate(x, repeats, seed)?;
    let completed: Vec<f64> = outcomes.iter().filter(|o| !o.truncated).map(|o| o.ret).collect();
    let used: Vec<f64> = if completed.is_empty() { outcomes.iter().map(|o| o.ret).collect() } else { completed };
    let y = used.iter().map(|g| scaler.scale(*g)).sum::<f64>() / used.len() as f64;
    Ok(ObservationRecord {
        iteration,
        x: x.to_vec(),
        returns: outcomes.iter().map(|o| o.ret).collect(),
        truncated: outcomes.iter().map(|o| o.truncated).collect(),
        y,
        mu: None,
        sigma: None,
    })
}

/// `h(x) = μ(x) + κ σ(x)` on the latent function.
pub fn ucb(model: &GpModel, u: &[f64], kappa: f64) -> f64 {
    let p = model.posterior(u);
    p.mean + kappa * p.std()
}

/// Multi-start bounded Nelder–Mead ascent of UCB over the unit box.
/// Returns the maximiser (normalised) and its UCB value; ties between
/// starts go to the lowest start index.
pub fn maximize_acquisition<R: Rng + ?Sized>(model: &GpModel, kappa: f64, starts: usize, rng: &mut R) -> (Vec<f64>, f64) {
    let d = model.kernel().lengthscales.len();
    let lo = vec![0.0; d];
    let hi = vec![1.0; d];
    let points: Vec<Vec<f64>> = (0..starts.max(1)).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let opts = NelderMeadOptions { max_evals: 60 * (d + 1), f_tol: 1e-9, initial_step: 0.05 };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for p in points {
        let m = nelder_mead(|u| -ucb(model, u, kappa), &p, &lo, &hi, &opts);
        let v = -m.f;
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((m.x, v));
        }
    }
    best.expect("at least one start")
}

/// The pilot sample shared by every method run on one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pilot {
    pub records: Vec<ObservationRecord>,
    pub scaler: Scaler,
    pub repeats: usize,
}

impl Pilot {
    /// Per-episode `(x, scaled g)` pairs.
    pub fn samples(&self) -> Vec<Sample> {
        self.records
            .iter()
            .flat_map(|r| r.returns.iter().map(move |g| Sample::new(r.x.clone(), self.scaler.scale(*g))))
            .collect()
    }

    /// Pooled within-point standard deviation of the scaled returns, or
    /// the overall spread when each point has a single episode.
    pub fn pooled_noise_std(&self) -> f64 {
        let mut ss = 0.0;
        let mut dof = 0usize;
        for r in &self.records {
            if r.returns.len() < 2 {
                continue;
            }
            let ys: Vec<f64> = r.returns.iter().map(|g| self.scaler.scale(*g)).collect();
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            ss += ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>();
            dof += ys.len() - 1;
        }
        let s = if dof > 0 {
            (ss / dof as f64).sqrt()
        } else {
            let ys: Vec<f64> = self.records.iter().map(|r| r.y).collect();
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            (ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / ys.len().max(2).saturating_sub(1) as f64).sqrt()
        };
        s.max(1e-3)
    }

    /// Trend and noise model fitted to the per-episode pilot returns.
    pub fn fit_noise_model(
        &self,
        box_: &SearchBox,
        degree: usize,
        opts: &NoiseFitOptions,
    ) -> Result<(TrendModel, NoiseModel), BoError> {
        let map = box_.polynomial_map(degree);
        let samples = self.samples();
        let trend = fit_trend(&samples, &map)?;
        let noise = fit_noise(&samples, &trend, &map, opts)?;
        Ok((trend, noise))
    }
}

/// Evaluates the Sobol pilot and fixes the reward scaling.
pub fn run_pilot<O: Objective + ?Sized>(objective: &O, cfg: &BoConfig, seed: u64) -> Result<Pilot, BoError> {
    cfg.validate()?;
    let box_ = objective.search_box();
    box_.validate()?;
    let identity = Scaler { min: 0.0, max: 100.0 };
    let mut records = Vec::with_capacity(cfg.pilot_size);
    for (i, x) in sobol_points(&box_, cfg.pilot_size).into_iter().enumerate() {
        records.push(observe(objective, &x, cfg.repeats, &identity, i, seed::derive(seed, &[seed::tag("pilot"), i as u64]))?);
    }
    let scaler = Scaler::from_returns(records.iter().flat_map(|r| r.returns.iter().copied()));
    for r in &mut records {
        r.y = scaler.scale(identity.unscale(r.y));
    }
    Ok(Pilot { records, scaler, repeats: cfg.repeats })
}

/// Noise model used by a run: the given heteroscedastic model, or a
/// constant model at the pilot's pooled noise level.
pub fn resolve_noise(cfg: &BoConfig, pilot: &Pilot, noise: Option<&NoiseModel>, box_: &SearchBox) -> Result<NoiseModel, BoError> {
    match (cfg.mode, noise) {
        (NoiseMode::Homoscedastic, None) => {
            Ok(NoiseModel::constant(pilot.pooled_noise_std(), box_.polynomial_map(1)))
        }
        (NoiseMode::Heteroscedastic, Some(m)) => Ok(m.clone()),
        (mode, None) => Err(BoError::NoiseModeMismatch { mode, detail: "requires a noise model" }),
        (mode, Some(_)) => Err(BoError::NoiseModeMismatch { mode, detail: "does not take a noise model" }),
    }
}

/// Serialisable state of a run, sufficient to resume it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoState {
    pub config: BoConfig,
    pub seed: u64,
    pub scaler: Scaler,
    pub theta: Theta,
    pub noise: NoiseModel,
    /// Likelihood of the pilot under `theta`.
    pub pilot_lml: f64,
    pub records: Vec<ObservationRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoResult {
    pub state: BoState,
    /// Incumbent: the queried point with the highest posterior mean.
    pub incumbent: Vec<f64>,
    /// Posterior mean at the incumbent, scaled units.
    pub incumbent_mean: f64,
    /// Seconds spent on each record, including acquisition.
    pub timings: Vec<f64>,
}

impl BoResult {
    pub fn records(&self) -> &[ObservationRecord] {
        &self.state.records
    }

    /// Running maximum of the observed `y`.
    pub fn best_observed(&self) -> Vec<f64> {
        running_max(self.state.records.iter().map(|r| r.y))
    }
}

pub fn running_max(ys: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    ys.into_iter()
        .map(|y| {
            best = best.max(y);
            best
        })
        .collect()
}

/// A run in progress. See the module docs for the phases.
pub struct BoRun<'a, O: Objective + ?Sized> {
    objective: &'a O,
    box_: SearchBox,
    state: BoState,
    timings: Vec<f64>,
}

impl<'a, O: Objective + ?Sized> BoRun<'a, O> {
    /// Fits θ on the pilot and observes the start point.
    pub fn start(
        objective: &'a O,
        cfg: &BoConfig,
        pilot: &Pilot,
        noise: Option<&NoiseModel>,
        seed: u64,
    ) -> Result<Self, BoError> {
        cfg.validate()?;
        let box_ = objective.search_box();
        box_.validate()?;
        let noise = resolve_noise(cfg, pilot, noise, &box_)?;
        let inputs: Vec<Vec<f64>> = pilot.records.iter().map(|r| box_.normalize(&r.x)).collect();
        let targets: Vec<f64> = pilot.records.iter().map(|r| r.y).collect();
        let raw: Vec<Vec<f64>> = pilot.records.iter().map(|r| r.x.clone()).collect();
        let repeats = pilot.repeats as f64;
        let noise_var = |p: f64| {
            let m = noise.with_free_parameter(p);
            raw.iter().map(|x| m.noise_std(x).powi(2) / repeats).collect::<Vec<f64>>()
        };
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let spread = (targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / targets.len() as f64).sqrt();
        let theta0 = Theta {
            amplitude: spread.max(1.0),
            lengthscales: vec![0.3; box_.dim()],
            noise: noise.free_parameter().max(1e-3),
        };
        let fit = fit_hyperparams(
            &inputs,
            &targets,
            cfg.prior_mean,
            noise_var,
            &theta0,
            &FitOptions::default(),
            &mut seed::stream(seed, &[seed::tag("theta")]),
        )?;
        let state = BoState {
            config: cfg.clone(),
            seed,
            scaler: pilot.scaler,
            theta: fit.theta,
            noise,
            pilot_lml: fit.lml,
            records: Vec::new(),
        };
        let mut run = Self { objective, box_, state, timings: Vec::new() };
        let started = Instant::now();
        let x0 = run.box_.worst_corner();
        let prior = run.model()?.posterior(&run.box_.normalize(&x0));
        let mut rec = run.observe_at(&x0, 0)?;
        rec.mu = Some(prior.mean);
        rec.sigma = Some(prior.std());
        run.state.records.push(rec);
        run.timings.push(started.elapsed().as_secs_f64());
        Ok(run)
    }

    /// Continues a run from a snapshot.
    pub fn resume(objective: &'a O, state: BoState) -> Result<Self, BoError> {
        let box_ = objective.search_box();
        let timings = vec![0.0; state.records.len()];
        Ok(Self { objective, box_, state, timings })
    }

    pub fn state(&self) -> &BoState {
        &self.state
    }

    /// Number of acquisition-driven observations made so far.
    pub fn completed_iterations(&self) -> usize {
        self.state.records.len().saturating_sub(1)
    }

    fn noise_var(&self, x: &[f64]) -> f64 {
        let m = self.state.noise.with_free_parameter(self.state.theta.noise);
        m.noise_std(x).powi(2) / self.state.config.repeats as f64
    }

    /// GP conditioned on all observations so far.
    pub fn model(&self) -> Result<GpModel, BoError> {
        let mut data = GpDataset::default();
        for r in &self.state.records {
            data.push(self.box_.normalize(&r.x), r.y, self.noise_var(&r.x));
        }
        Ok(GpModel::new(self.state.theta.kernel(), self.state.config.prior_mean, data)?)
    }

    fn observe_at(&self, x: &[f64], iteration: usize) -> Result<ObservationRecord, BoError> {
        let obs_seed = seed::derive(self.state.seed, &[seed::tag("observe"), iteration as u64]);
        observe(self.objective, x, self.state.config.repeats, &self.state.scaler, iteration, obs_seed)
    }

    /// One acquisition-driven observation.
    pub fn step(&mut self) -> Result<&ObservationRecord, BoError> {
        let started = Instant::now();
        let t = self.completed_iterations() + 1;
        let model = self.model()?;
        let mut rng = seed::stream(self.state.seed, &[seed::tag("acquire"), t as u64]);
        let (u, _) = maximize_acquisition(&model, self.state.config.kappa, self.state.config.acquisition_starts, &mut rng);
        let x = self.box_.denormalize(&u);
        let post = model.posterior(&self.box_.normalize(&x));
        let mut rec = self.observe_at(&x, t)?;
        rec.mu = Some(post.mean);
        rec.sigma = Some(post.std());
        self.state.records.push(rec);
        self.timings.push(started.elapsed().as_secs_f64());
        Ok(self.state.records.last().unwrap())
    }

    pub fn finish(self) -> Result<BoResult, BoError> {
        let model = self.model()?;
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, r) in self.state.records.iter().enumerate() {
            let m = model.posterior(&self.box_.normalize(&r.x)).mean;
            if m > best.1 {
                best = (i, m);
            }
        }
        let incumbent = self.state.records[best.0].x.clone();
        Ok(BoResult { state: self.state, incumbent, incumbent_mean: best.1, timings: self.timings })
    }
}

/// Full loop: θ fit on the pilot, start point, then `cfg.iterations`
/// UCB-driven observations. On failure the observations made so far are
/// returned with the error.
pub fn run_bo<O: Objective + ?Sized>(
    objective: &O,
    cfg: &BoConfig,
    pilot: &Pilot,
    noise: Option<&NoiseModel>,
    seed: u64,
) -> Result<BoResult, BoFailure> {
    let mut run = BoRun::start(objective, cfg, pilot, noise, seed).map_err(|error| BoFailure { error, records: vec![] })?;
    while run.completed_iterations() < cfg.iterations {
        if let Err(error) = run.step() {
            return Err(BoFailure { error, records: run.state.records.clone() });
        }
    }
    let records = run.state.records.clone();
    run.finish().map_err(|error| BoFailure { error, records })
}

/// Trace CSV: `iteration,<params>,y,best_y,mu,sigma,g_1..g_n,truncated`.
/// Absent posterior values are written as empty fields.
pub fn write_trace_csv<W: std::io::Write>(
    records: &[ObservationRecord],
    param_names: &[String],
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n_g = records.iter().map(|r| r.returns.len()).max().unwrap_or(0);
    let mut header = vec!["iteration".to_string()];
    header.extend(param_names.iter().cloned());
    header.extend(["y", "best_y", "mu", "sigma"].map(String::from));
    header.extend((1..=n_g).map(|j| format!("g_{j}")));
    header.push("truncated".into());
    w.write_record(&header)?;
    let best = running_max(records.iter().map(|r| r.y));
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (r, b) in records.iter().zip(best) {
        let mut row = vec![r.iteration.to_string()];
        row.extend(r.x.iter().map(|v| v.to_string()));
        row.extend([r.y.to_string(), b.to_string(), opt(r.mu), opt(r.sigma)]);
        row.extend((0..n_g).map(|j| r.returns.get(j).map(|g| g.to_string()).unwrap_or_default()));
        row.push(r.truncated.iter().filter(|t| **t).count().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::SquaredExponential;
    use crate::synthetic::HeteroBenchmark;

    #[test]
    fn ucb_fixtures() {
        let prior = GpModel::new(SquaredExponential::new(10.0, vec![0.2]), 50.0, GpDataset::default()).unwrap();
        assert!((ucb(&prior, &[0.3], 1.2) - 62.0).abs() < 1e-12);
        assert_eq!(ucb(&prior, &[0.3], 0.0), 50.0);

        // One observation: μ = m + k (y - m)/(k0 + s), σ² = k0 - k²/(k0 + s).
        let k = SquaredExponential::new(2.0, vec![0.5]);
        let data = GpDataset::new(vec![vec![0.2]], vec![3.0], vec![0.25]).unwrap();
        let m = GpModel::new(k.clone(), 1.0, data).unwrap();
        let kx = 4.0 * (-0.5f64 * (0.3f64 / 0.5).powi(2)).exp();
        let mu = 1.0 + kx * 2.0 / 4.25;
        let var = 4.0 - kx * kx / 4.25;
        assert!((ucb(&m, &[0.5], 1.7) - (mu + 1.7 * var.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn acquisition_on_flat_posterior_returns_first_start() {
        let prior = GpModel::new(SquaredExponential::new(1.0, vec![0.2, 0.2]), 0.0, GpDataset::default()).unwrap();
        let mut rng = seed::stream(1, &[]);
        let (u, v) = maximize_acquisition(&prior, 1.2, 32, &mut rng);
        let mut rng = seed::stream(1, &[]);
        let first: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..1.0)).collect();
        assert_eq!(u, first);
        assert!((v - 1.2).abs() < 1e-12);
    }

    fn two_bump_model() -> GpModel {
        let f = |x: f64| 3.0 * (-((x - 0.25) / 0.07).powi(2)).exp() + 2.0 * (-((x - 0.7) / 0.07).powi(2)).exp();
        let xs: Vec<Vec<f64>> = (0..25).map(|i| vec![i as f64 / 24.0]).collect();
        let ys = xs.iter().map(|x| f(x[0])).collect();
        let data = GpDataset::new(xs, ys, vec![1e-4; 25]).unwrap();
        GpModel::new(SquaredExponential::new(2.0, vec![0.06]), 0.0, data).unwrap()
    }

    #[test]
    fn acquisition_finds_higher_bump() {
        let m = two_bump_model();
        // Grid-scan oracle at resolution 1e-4.
        let (mut arg, mut best) = (0.0, f64::NEG_INFINITY);
        for i in 0..=10_000 {
            let u = i as f64 * 1e-4;
            let v = ucb(&m, &[u], 0.0);
            if v > best {
                (arg, best) = (u, v);
            }
        }
        let hits = (0..100)
            .filter(|&s| {
                let (u, v) = maximize_acquisition(&m, 0.0, 32, &mut seed::stream(2, &[s]));
                assert!((0.0..=1.0).contains(&u[0]));
                assert!(v <= best + 1e-6);
                (u[0] - arg).abs() < 0.05
            })
            .count();
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn acquisition_never_below_its_starts() {
        let data = GpDataset::new(vec![vec![0.4, 0.6]], vec![10.0], vec![0.01]).unwrap();
        let m = GpModel::new(SquaredExponential::new(3.0, vec![0.1, 0.1]), 0.0, data).unwrap();
        let (u, v) = maximize_acquisition(&m, 1.2, 32, &mut seed::stream(3, &[]));
        let mut rng = seed::stream(3, &[]);
        for _ in 0..32 {
            let s: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..1.0)).collect();
            assert!(v >= ucb(&m, &s, 1.2));
        }
        assert!(u.iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn ucb_is_monotone_in_kappa() {
        let m = two_bump_model();
        for i in 0..50 {
            let u = [i as f64 / 49.0];
            assert!(ucb(&m, &u, 2.0) >= ucb(&m, &u, 1.0));
        }
    }

    #[test]
    fn sobol_skips_origin_and_stays_in_box() {
        let b = SearchBox::new(vec![1e-10, 1e-10], vec![1.2, 3.0]).unwrap();
        let pts = sobol_points(&b, 20);
        assert_eq!(pts.len(), 20);
        assert_eq!(pts[0], vec![1e-10 + 0.5 * (1.2 - 1e-10), 1e-10 + 0.5 * (3.0 - 1e-10)]);
        assert!(pts.iter().all(|p| b.contains(p)));
    }

    #[test]
    fn scaler_maps_pilot_range() {
        let s = Scaler::from_returns([-300.0, -100.0, -200.0]);
        assert_eq!(s.scale(-300.0), 0.0);
        assert_eq!(s.scale(-100.0), 100.0);
        assert_eq!(s.scale(0.0), 150.0);
        assert!((s.unscale(s.scale(-123.4)) + 123.4).abs() < 1e-12);
    }

    #[test]
    fn observe_averages_and_is_deterministic() {
        let obj = HeteroBenchmark::default();
        let s = Scaler { min: 0.0, max: 100.0 };
        let a = observe(&obj, &[0.3], 1, &s, 0, 9).unwrap();
        let g = obj.evaluate(&[0.3], 1, 9).unwrap();
        assert_eq!(a.y, g[0].ret);
        let b = observe(&obj, &[0.3], 4, &s, 0, 9).unwrap();
        assert_eq!(b, observe(&obj, &[0.3], 4, &s, 0, 9).unwrap());
        assert!((b.y - b.returns.iter().sum::<f64>() / 4.0).abs() < 1e-12);
        assert!(observe(&obj, &[1.3], 1, &s, 0, 9).is_err());
    }

    #[test]
    fn noise_mode_must_match() {
        let obj = HeteroBenchmark::default();
        let cfg = BoConfig { iterations: 0, repeats: 2, ..Default::default() };
        let pilot = run_pilot(&obj, &cfg, 4).unwrap();
        let b = obj.search_box();
        let m = NoiseModel::constant(1.0, b.polynomial_map(1));
        assert!(matches!(resolve_noise(&cfg, &pilot, Some(&m), &b), Err(BoError::NoiseModeMismatch { .. })));
        let hetero = BoConfig { mode: NoiseMode::Heteroscedastic, ..cfg };
        assert!(matches!(resolve_noise(&hetero, &pilot, None, &b), Err(BoError::NoiseModeMismatch { .. })));
    }

    #[test]
    fn zero_iterations_keep_the_start_point() {
        let obj = HeteroBenchmark::default();
        let cfg = BoConfig { iterations: 0, repeats: 2, ..Default::default() };
        let pilot = run_pilot(&obj, &cfg, 5).unwrap();
        let res = run_bo(&obj, &cfg, &pilot, None, 5).unwrap();
        assert_eq!(res.records().len(), 1);
        assert_eq!(res.incumbent, obj.search_box().worst_corner());
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let obj = HeteroBenchmark::default();
        let cfg = BoConfig { iterations: 6, repeats: 2, ..Default::default() };
        let pilot = run_pilot(&obj, &cfg, 6).unwrap();
        let full = run_bo(&obj, &cfg, &pilot, None, 6).unwrap();

        let mut run = BoRun::start(&obj, &cfg, &pilot, None, 6).unwrap();
        for _ in 0..3 {
            run.step().unwrap();
        }
        let text = serde_json::to_string(run.state()).unwrap();
        let state: BoState = serde_json::from_str(&text).unwrap();
        let mut resumed = BoRun::resume(&obj, state).unwrap();
        while resumed.completed_iterations() < cfg.iterations {
            resumed.step().unwrap();
        }
        assert_eq!(resumed.finish().unwrap().state, full.state);
    }

    #[test]
    fn trace_csv_layout() {
        let recs = vec![
            ObservationRecord { iteration: 0, x: vec![0.5], returns: vec![1.0, 2.0], truncated: vec![false, true], y: 1.0, mu: None, sigma: None },
            ObservationRecord { iteration: 1, x: vec![0.25], returns: vec![0.5, 0.0], truncated: vec![false, false], y: 0.25, mu: Some(3.0), sigma: Some(0.5) },
        ];
        let mut buf = Vec::new();
        write_trace_csv(&recs, &["x".into()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "iteration,x,y,best_y,mu,sigma,g_1,g_2,truncated\n0,0.5,1,1,,,1,2,1\n1,0.25,0.25,1,3,0.5,0.5,0,0\n"
        );
    }
}
