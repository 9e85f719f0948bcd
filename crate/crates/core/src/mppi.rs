//! Model predictive path integral control.
//!
//! At every control step the controller perturbs its rolling sequence of
//! optimal actions with Gaussian noise, scores each perturbed sequence on the
//! plant model, and moves the sequence toward the exponentially weighted
//! average of the perturbations. The first action is emitted and the
//! sequence is shifted by one step.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Plant, State};
use crate::seed;

/// Cost assigned to a rollout whose simulated state diverges.
pub const DIVERGENCE_PENALTY: f64 = 1e9;

/// Rollout batches at least this large (horizon × rollouts) are scored in parallel.
const PARALLEL_WORK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MppiError {
    #[error("invalid MPPI configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Action appended at the end of the sequence after each shift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailAction {
    #[default]
    Zero,
    /// A fresh draw from `N(0, sigma_eps^2)`.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MppiConfig {
    /// Temperature λ.
    pub lambda: f64,
    /// Standard deviation of the control perturbations.
    pub sigma_eps: f64,
    pub horizon: usize,
    pub rollouts: usize,
    #[serde(default)]
    pub tail: TailAction,
}

impl MppiConfig {
    pub fn new(lambda: f64, sigma_eps: f64, horizon: usize, rollouts: usize) -> Self {
        Self { lambda, sigma_eps, horizon, rollouts, tail: TailAction::Zero }
    }

    pub fn validate(&self) -> Result<(), MppiError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(MppiError::InvalidConfig(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.sigma_eps > 0.0 && self.sigma_eps.is_finite()) {
            return Err(MppiError::InvalidConfig(format!(
                "sigma_eps must be positive, got {}",
                self.sigma_eps
            )));
        }
        if self.horizon == 0 || self.rollouts == 0 {
            return Err(MppiError::InvalidConfig("horizon and rollouts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Simulates `controls` from `state` and returns the terminal cost of the
/// last state plus the running cost of the intermediate states. A rollout
/// that leaves the finite range costs [`DIVERGENCE_PENALTY`].
pub fn rollout_cost(plant: &Plant, state: &State, controls: &[f64]) -> f64 {
    let mut s = *state;
    let mut total = 0.0;
    // The terminal cost is the running cost evaluated at the last state, so
    // every visited state contributes the same way.
    for &a in controls {
        s = match plant.step(&s, a) {
            Ok(next) => next,
            Err(_) => return DIVERGENCE_PENALTY,
        };
        total += plant.cost(&s);
    }
    if total.is_finite() {
        total.min(DIVERGENCE_PENALTY)
    } else {
        DIVERGENCE_PENALTY
    }
}

/// Normalised rollout weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub values: Vec<f64>,
    /// Set when no exponent was finite and uniform weights were substituted.
    pub degenerate: bool,
}

/// Exponentiated-cost weights over `M` rollouts:
/// `w_j ∝ exp(-(C_j + λ/σ² · coupling_j) / λ)`, evaluated after subtracting
/// the smallest exponent argument.
pub fn compute_weights(costs: &[f64], coupling: &[f64], lambda: f64, sigma_eps: f64) -> Weights {
    assert_eq!(costs.len(), coupling.len(), "costs and coupling must have equal length");
    assert!(!costs.is_empty(), "at least one rollout is required");
    let inv_var = 1.0 / (sigma_eps * sigma_eps);
    let args: Vec<f64> = costs.iter().zip(coupling).map(|(&c, &k)| c / lambda + inv_var * k).collect();
    let min = args.iter().copied().filter(|a| a.is_finite()).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        let n = costs.len();
        return Weights { values: vec![1.0 / n as f64; n], degenerate: true };
    }
    let raw: Vec<f64> = args
        .iter()
        .map(|&a| if a.is_finite() { (-(a - min)).exp() } else { 0.0 })
        .collect();
    let eta: f64 = raw.iter().sum();
    Weights { values: raw.into_iter().map(|r| r / eta).collect(), degenerate: false }
}

/// `a*_i += Σ_j w_j ε_i^j`. `perturbations[j]` is rollout `j`'s noise sequence.
pub fn update_actions(optimal: &mut [f64], weights: &[f64], perturbations: &[Vec<f64>]) {
    assert_eq!(weights.len(), perturbations.len());
    for (i, a) in optimal.iter_mut().enumerate() {
        *a += weights.iter().zip(perturbations).map(|(w, eps)| w * eps[i]).sum::<f64>();
    }
}

/// Diagnostics of one control step.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub action: f64,
    pub weights: Weights,
    pub costs: Vec<f64>,
}

/// Receding-horizon MPPI controller. Owns the rolling action sequence.
#[derive(Clone, Debug)]
pub struct Controller {
    cfg: MppiConfig,
    optimal: Vec<f64>,
}

impl Controller {
    /// Starts with an all-zero action sequence.
    pub fn new(cfg: MppiConfig) -> Result<Self, MppiError> {
        cfg.validate()?;
        let optimal = vec![0.0; cfg.horizon];
        Ok(Self { cfg, optimal })
    }

    pub fn config(&self) -> &MppiConfig {
        &self.cfg
    }

    pub fn optimal_actions(&self) -> &[f64] {
        &self.optimal
    }

    pub fn set_optimal_actions(&mut self, actions: Vec<f64>) {
        assert_eq!(actions.len(), self.cfg.horizon);
        self.optimal = actions;
    }

    /// Runs one MPPI iteration from `state`, emits the clamped first action
    /// and shifts the sequence.
    pub fn step<R: Rng + ?Sized>(&mut self, plant: &Plant, state: &State, rng: &mut R) -> StepReport {
        let (m, t, sigma) = (self.cfg.rollouts, self.cfg.horizon, self.cfg.sigma_eps);
        let step_seed: u64 = rng.random();
        let tail_draw: f64 = StandardNormal.sample(rng);

        let perturbations: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let mut r = seed::stream(step_seed, &[j as u64]);
                (0..t).map(|_| { let z: f64 = StandardNormal.sample(&mut r); sigma * z }).collect()
            })
            .collect();

        let optimal = &self.optimal;
        let score = |eps: &Vec<f64>| {
            let controls: Vec<f64> = optimal.iter().zip(eps).map(|(a, e)| a + e).collect();
            let coupling: f64 = optimal.iter().zip(&controls).map(|(a, v)| a * v).sum();
            (rollout_cost(plant, state, &controls), coupling)
        };
        let scored: Vec<(f64, f64)> = if m * t >= PARALLEL_WORK {
            perturbations.par_iter().map(score).collect()
        } else {
            perturbations.iter().map(score).collect()
        };
        let (costs, coupling): (Vec<f64>, Vec<f64>) = scored.into_iter().unzip();

        let weights = compute_weights(&costs, &coupling, self.cfg.lambda, sigma);
        update_actions(&mut self.optimal, &weights.values, &perturbations);

        let action = plant.clamp_action(self.optimal[0]);
        self.optimal.rotate_left(1);
        self.optimal[t - 1] = match self.cfg.tail {
            TailAction::Zero => 0.0,
            TailAction::Random => sigma * tail_draw,
        };
        StepReport { action, weights, costs }
    }
}

/// One row of an episode trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub state: State,
    pub action: f64,
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct Episode {
    /// Cumulative reward over the executed steps.
    pub ret: f64,
    /// True when the plant diverged before `n_e` steps.
    pub truncated: bool,
    pub initial_state: State,
    pub trace: Vec<TraceRow>,
}

impl Episode {
    pub fn final_state(&self) -> State {
        self.trace.last().map(|r| r.state).unwrap_or(self.initial_state)
    }
}

/// Closed-loop episode of `n_e` steps from a sampled initial state. The
/// reward of each step is the reward of the state reached by the emitted
/// action.
pub fn run_episode<R: Rng + ?Sized>(
    plant: &Plant,
    cfg: &MppiConfig,
    n_e: usize,
    rng: &mut R,
) -> Result<Episode, MppiError> {
    if n_e == 0 {
        return Err(MppiError::InvalidConfig("episode length must be at least 1".into()));
    }
    let mut controller = Controller::new(cfg.clone())?;
    let initial_state = plant.sample_initial_state(rng);
    let mut s = initial_state;
    let mut ret = 0.0;
    let mut truncated = false;
    let mut trace = Vec::with_capacity(n_e);
    for i in 0..n_e {
        let report = controller.step(plant, &s, rng);
        let next = match plant.step(&s, report.action) {
            Ok(next) => next,
            Err(_) => {
                truncated = true;
                break;
            }
        };
        let r = plant.reward(&next, report.action)?;
        ret += r;
        trace.push(TraceRow { time: (i + 1) as f64 * plant.dt, state: next, action: report.action, reward: r });
        s = next;
    }
    Ok(Episode { ret, truncated, initial_state, trace })
}

/// Writes an episode trace as CSV: `time,s0..s{d-1},action,reward`.
pub fn write_trace_csv<W: std::io::Write>(episode: &Episode, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = episode.initial_state.dim();
    let mut header = vec!["time".to_string()];
    header.extend((0..dim).map(|i| format!("s{i}")));
    header.push("action".into());
    header.push("reward".into());
    w.write_record(&header)?;
    let mut row = |time: f64, s: &State, a: f64, r: f64| {
        let mut rec = vec![time.to_string()];
        rec.extend(s.as_slice().iter().map(|v| v.to_string()));
        rec.push(a.to_string());
        rec.push(r.to_string());
        w.write_record(&rec)
    };
    for r in &episode.trace {
        row(r.time, &r.state, r.action, r.reward)?;
    }
    w.flush()?;
    Ok(())
}
