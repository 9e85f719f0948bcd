//! Covariance matrix adaptation evolution strategy, used as a baseline
//! optimiser. Standard default learning rates; candidates are clipped to the
//! search box and the clipped points enter the update.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::{observe, BoError, ObservationRecord, Objective, Scaler, SearchBox};
use crate::seed;

/// Smallest eigenvalue kept in the covariance matrix.
pub const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmaError {
    #[error("invalid CMA-ES setting: {0}")]
    Config(String),
    #[error("expected {expected} finite fitness values, got {got:?}")]
    Fitness { expected: usize, got: Vec<f64> },
    #[error(transparent)]
    Objective(#[from] BoError),
}

/// Strategy constants derived from dimension and population size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmaParams {
    pub population: usize,
    pub parents: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaParams {
    pub fn new(n: usize, population: usize) -> Self {
        let nf = n as f64;
        let parents = population / 2;
        let raw: Vec<f64> =
            (0..parents).map(|i| ((population as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self { population, parents, weights, mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n }
    }
}

/// Optimiser state. Minimises.
#[derive(Clone, Debug, PartialEq)]
pub struct CmaState {
    pub params: CmaParams,
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: usize,
    /// Number of times the covariance was reset to the identity.
    pub resets: usize,
    bounds: SearchBox,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
}

impl CmaState {
    pub fn new(mean: Vec<f64>, sigma0: f64, population: usize, bounds: SearchBox) -> Result<Self, CmaError> {
        bounds.validate()?;
        let n = mean.len();
        if n != bounds.dim() {
            return Err(CmaError::Config(format!("mean of dimension {n} for a box of dimension {}", bounds.dim())));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(CmaError::Config(format!("sigma0 must be positive, got {sigma0}")));
        }
        if population < 2 {
            return Err(CmaError::Config("population must be at least 2".into()));
        }
        Ok(Self {
            params: CmaParams::new(n, population),
            mean: DVector::from_vec(bounds.clamp(&mean)),
            sigma: sigma0,
            cov: DMatrix::identity(n, n),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            resets: 0,
            bounds,
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Samples a population from `N(m, σ²C)` clipped to the box.
    pub fn ask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..self.params.population)
            .map(|_| {
                let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
                let y = &self.basis * self.scales.component_mul(&z);
                let x = &self.mean + y * self.sigma;
                self.bounds.clamp(x.as_slice())
            })
            .collect()
    }

    /// Updates from evaluated candidates (lower fitness is better). Ties
    /// keep the candidate order.
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<(), CmaError> {
        let p = &self.params;
        if candidates.len() != p.population || fitness.len() != p.population || fitness.iter().any(|f| !f.is_finite()) {
            return Err(CmaError::Fitness { expected: p.population, got: fitness.to_vec() });
        }
        let n = self.dim();
        let mut order: Vec<usize> = (0..p.population).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));
        let steps: Vec<DVector<f64>> = order[..p.parents]
            .iter()
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &self.mean) / self.sigma)
            .collect();
        let y_w = steps.iter().zip(&p.weights).fold(DVector::zeros(n), |acc, (y, w)| acc + y * *w);
        self.mean += &y_w * self.sigma;

        let inv_sqrt = &self.basis * DMatrix::from_diagonal(&self.scales.map(|d| 1.0 / d)) * self.basis.transpose();
        self.p_sigma = &self.p_sigma * (1.0 - p.c_sigma) + inv_sqrt * &y_w * (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();
        let norm_ps = self.p_sigma.norm();
        let denom = (1.0 - (1.0 - p.c_sigma).powi(2 * (self.generation as i32 + 1))).sqrt();
        let h_sigma = if norm_ps / denom < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n { 1.0 } else { 0.0 };
        self.p_c = &self.p_c * (1.0 - p.c_c) + &y_w * (h_sigma * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt());

        let rank_mu = steps.iter().zip(&p.weights).fold(DMatrix::zeros(n, n), |acc, (y, w)| acc + y * y.transpose() * *w);
        let decay = 1.0 - p.c_1 - p.c_mu * p.weights.iter().sum::<f64>() + (1.0 - h_sigma) * p.c_1 * p.c_c * (2.0 - p.c_c);
        self.cov = &self.cov * decay + &self.p_c * self.p_c.transpose() * p.c_1 + rank_mu * p.c_mu;
        self.sigma *= ((p.c_sigma / p.d_sigma) * (norm_ps / p.chi_n - 1.0)).exp();
        self.generation += 1;
        self.refresh_eigen();
        Ok(())
    }

    /// Symmetrises `C`, floors its eigenvalues and refreshes `B`, `D`.
    /// Resets `C` and the paths when the matrix is unusable.
    fn refresh_eigen(&mut self) {
        let n = self.dim();
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let usable = sym.iter().all(|v| v.is_finite()) && self.sigma.is_finite() && self.sigma > 0.0;
        let eig = usable.then(|| SymmetricEigen::new(sym.clone()));
        match eig {
            Some(e) if e.eigenvalues.iter().all(|v| v.is_finite()) => {
                let vals = e.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
                let rebuilt = &e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose();
                self.cov = (&rebuilt + rebuilt.transpose()) * 0.5;
                self.basis = e.eigenvectors;
                self.scales = vals.map(f64::sqrt);
            }
            _ => {
                self.cov = DMatrix::identity(n, n);
                self.basis = DMatrix::identity(n, n);
                self.scales = DVector::from_element(n, 1.0);
                self.p_sigma = DVector::zeros(n);
                self.p_c = DVector::zeros(n);
                if !(self.sigma.is_finite() && self.sigma > 0.0) {
                    self.sigma = 1.0;
                }
                self.resets += 1;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmaConfig {
    /// Initial step size in raw parameter units.
    pub sigma0: f64,
    pub population: usize,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self { sigma0: 1.0, population: 2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmaResult {
    pub records: Vec<ObservationRecord>,
    /// Final distribution mean.
    pub mean: Vec<f64>,
    pub resets: usize,
    pub timings: Vec<f64>,
}

/// Maximises the scaled objective by minimising `-y` over `evaluations`
/// observations of `repeats` episodes each. The start point is the lower box
/// corner, observed with the same seed as the BO start point.
pub fn run_cmaes<O: Objective + ?Sized>(
    objective: &O,
    cfg: &CmaConfig,
    evaluations: usize,
    repeats: usize,
    scaler: &Scaler,
    seed: u64,
) -> Result<CmaResult, CmaError> {
    let bounds = objective.search_box();
    let x0 = bounds.worst_corner();
    let mut state = CmaState::new(x0.clone(), cfg.sigma0, cfg.population, bounds)?;
    let obs_seed = |t: usize| seed::derive(seed, &[seed::tag("observe"), t as u64]);
    let started = Instant::now();
    let mut records = vec![observe(objective, &x0, repeats, scaler, 0, obs_seed(0))?];
    let mut timings = vec![started.elapsed().as_secs_f64()];
    while records.len() <= evaluations {
        let started = Instant::now();
        let mut rng = seed::stream(seed, &[seed::tag("cma-ask"), state.generation as u64]);
        let candidates = state.ask(&mut rng);
        let mut fitness = Vec::with_capacity(candidates.len());
        for x in &candidates {
            let t = records.len();
            let rec = observe(objective, x, repeats, scaler, t, obs_seed(t))?;
            fitness.push(-rec.y);
            if t <= evaluations {
                records.push(rec);
                timings.push(started.elapsed().as_secs_f64() / candidates.len() as f64);
            }
        }
        state.tell(&candidates, &fitness)?;
    }
    Ok(CmaResult { records, mean: state.mean.iter().copied().collect(), resets: state.resets, timings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wide_box() -> SearchBox {
        SearchBox::new(vec![-10.0, -10.0], vec![10.0, 10.0]).unwrap()
    }

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn default_constants_for_two_dimensions() {
        let p = CmaParams::new(2, 2);
        assert_eq!(p.parents, 1);
        assert_eq!(p.weights, vec![1.0]);
        assert_eq!(p.mu_eff, 1.0);
        assert!((p.c_sigma - 3.0 / 8.0).abs() < 1e-15);
        assert!((p.d_sigma - 1.375).abs() < 1e-15);
        assert!((p.c_c - 4.5 / 7.0).abs() < 1e-15);
        assert!((p.c_1 - 2.0 / 11.89).abs() < 1e-15);
        assert_eq!(p.c_mu, 0.0);
    }

    #[test]
    fn tiny_sigma_samples_the_mean() {
        let s = CmaState::new(vec![1.0, 2.0], 1e-300, 2, wide_box()).unwrap();
        for c in s.ask(&mut seed::stream(1, &[])) {
            assert_eq!(c, vec![1.0, 2.0]);
        }
    }

    #[test]
    fn ask_is_deterministic_and_clipped() {
        let b = SearchBox::new(vec![0.0, 0.0], vec![0.1, 0.1]).unwrap();
        let s = CmaState::new(vec![0.05, 0.05], 5.0, 2, b.clone()).unwrap();
        let a = s.ask(&mut seed::stream(2, &[]));
        assert_eq!(a, s.ask(&mut seed::stream(2, &[])));
        assert!(a.iter().all(|c| b.contains(c)));
    }

    #[test]
    fn identity_sample_covariance() {
        let s = CmaState::new(vec![0.0, 0.0], 0.5, 2, SearchBox::new(vec![-1e3, -1e3], vec![1e3, 1e3]).unwrap()).unwrap();
        let mut rng = seed::stream(3, &[]);
        let pts: Vec<Vec<f64>> = (0..5000).flat_map(|_| s.ask(&mut rng)).collect();
        let n = pts.len() as f64;
        let mean: Vec<f64> = (0..2).map(|i| pts.iter().map(|p| p[i]).sum::<f64>() / n).collect();
        for i in 0..2 {
            for j in 0..2 {
                let c = pts.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum::<f64>() / (n - 1.0);
                let expected = if i == j { 0.25 } else { 0.0 };
                assert!((c - expected).abs() < 0.1 * 0.25, "C[{i}{j}] = {c}");
            }
        }
    }

    #[test]
    fn equal_fitness_follows_candidate_order() {
        let mut s = CmaState::new(vec![0.0, 0.0], 1.0, 2, wide_box()).unwrap();
        let c = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        s.tell(&c, &[3.0, 3.0]).unwrap();
        assert_eq!(s.mean.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn mean_moves_toward_dominant_candidate() {
        let mut s = CmaState::new(vec![0.0, 0.0], 1.0, 2, wide_box()).unwrap();
        let c = vec![vec![2.0, 2.0], vec![-1.0, 0.5]];
        s.tell(&c, &[5.0, -1.0]).unwrap();
        assert_eq!(s.mean.as_slice(), &[-1.0, 0.5]);
        assert!(s.tell(&c, &[f64::NAN, 0.0]).is_err());
    }

    fn run_sphere(seed: u64, generations: usize) -> (CmaState, Vec<f64>) {
        let mut s = CmaState::new(vec![3.0, -2.0], 1.0, 2, wide_box()).unwrap();
        let mut best = vec![];
        for g in 0..generations {
            let c = s.ask(&mut seed::stream(seed, &[g as u64]));
            let f: Vec<f64> = c.iter().map(|x| sphere(x)).collect();
            best.push(f.iter().copied().fold(f64::INFINITY, f64::min));
            s.tell(&c, &f).unwrap();
        }
        (s, best)
    }

    #[test]
    fn converges_on_sphere() {
        // Comma selection with two offspring is slow; a few seeds stall.
        let mut norms: Vec<f64> = (0..50).map(|seed| run_sphere(seed, 200).0.mean.norm()).collect();
        norms.sort_by(f64::total_cmp);
        assert!(norms[25] < 1e-2, "median {}", norms[25]);
        assert!(norms.iter().filter(|n| **n < 1e-2).count() >= 40, "{norms:?}");
    }

    #[test]
    fn best_so_far_never_increases() {
        for seed in 0..50 {
            let (_, best) = run_sphere(seed, 200);
            let mut so_far = f64::INFINITY;
            let mut prev = f64::INFINITY;
            for b in best {
                so_far = so_far.min(b);
                assert!(so_far <= prev);
                prev = so_far;
            }
        }
    }

    #[test]
    fn covariance_stays_symmetric_positive_definite() {
        let (s, _) = run_sphere(4, 300);
        assert_eq!(s.cov, s.cov.transpose());
        let e = SymmetricEigen::new(s.cov.clone());
        assert!(e.eigenvalues.iter().all(|v| *v >= EIGEN_FLOOR * 0.999));
        assert_eq!(s.resets, 0);
    }

    #[test]
    fn run_respects_budget_box_and_start() {
        use crate::bayesopt::{run_bo, run_pilot, BoConfig};
        use crate::synthetic::HeteroBenchmark;
        let obj = HeteroBenchmark::default();
        let bo = BoConfig { iterations: 7, repeats: 2, pilot_size: 6, acquisition_starts: 4, ..Default::default() };
        let pilot = run_pilot(&obj, &bo, 3).unwrap();
        let run = run_cmaes(&obj, &CmaConfig::default(), 7, 2, &pilot.scaler, 3).unwrap();
        assert_eq!(run.records.len(), 8);
        assert_eq!(run.timings.len(), 8);
        assert!(run.records.iter().enumerate().all(|(t, r)| r.iteration == t && (0.0..=1.0).contains(&r.x[0])));
        assert!(run.records.iter().all(|r| r.mu.is_none() && r.sigma.is_none()));
        let start = &run_bo(&obj, &bo, &pilot, None, 3).unwrap().state.records[0];
        assert_eq!((&start.x, &start.returns), (&run.records[0].x, &run.records[0].returns));
        let again = run_cmaes(&obj, &CmaConfig::default(), 7, 2, &pilot.scaler, 3).unwrap();
        assert_eq!((&run.records, &run.mean), (&again.records, &again.mean));
    }

    #[test]
    fn degenerate_covariance_resets_to_identity() {
        let mut s = CmaState::new(vec![0.0, 0.0], 1.0, 2, wide_box()).unwrap();
        s.cov[(0, 1)] = f64::NAN;
        s.refresh_eigen();
        assert_eq!(s.cov, DMatrix::identity(2, 2));
        assert_eq!(s.resets, 1);
    }
}
