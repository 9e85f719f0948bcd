//! Exact Gaussian-process regression with a constant prior mean, an ARD
//! squared-exponential covariance and a diagonal observation-noise
//! covariance supplied per data point.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{nelder_mead, NelderMeadOptions};

/// Diagonal jitter tried in turn when factorising `K + Σ_ν`.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("covariance matrix of {n} points is not positive definite even with jitter {jitter:e}")]
    IllConditioned { n: usize, jitter: f64 },
    #[error("dataset mismatch: {0}")]
    Shape(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
}

/// `k(x, x') = σ_n² exp(-½ Σ_d (x_d - x'_d)² / ℓ_d²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquaredExponential {
    pub amplitude: f64,
    pub lengthscales: Vec<f64>,
}

impl SquaredExponential {
    pub fn new(amplitude: f64, lengthscales: Vec<f64>) -> Self {
        Self { amplitude, lengthscales }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(GpError::InvalidKernel(format!("amplitude {}", self.amplitude)));
        }
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(GpError::InvalidKernel(format!("lengthscales {:?}", self.lengthscales)));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.amplitude * self.amplitude
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let d = (x - y) / l;
                d * d
            })
            .sum();
        self.variance() * (-0.5 * r2).exp()
    }
}

/// Gram matrix `[k(a_i, b_j)]`.
pub fn kernel_matrix(kernel: &SquaredExponential, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kernel.eval(&a[i], &b[j]))
}

/// Training data with per-point observation-noise variances.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GpDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub noise_var: Vec<f64>,
}

impl GpDataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>, noise_var: Vec<f64>) -> Result<Self, GpError> {
        let d = Self { inputs, targets, noise_var };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64, noise_var: f64) {
        self.inputs.push(x);
        self.targets.push(y);
        self.noise_var.push(noise_var);
    }

    fn validate(&self) -> Result<(), GpError> {
        let n = self.targets.len();
        if self.inputs.len() != n || self.noise_var.len() != n {
            return Err(GpError::Shape(format!(
                "{} inputs, {} targets, {} noise variances",
                self.inputs.len(),
                n,
                self.noise_var.len()
            )));
        }
        if self.noise_var.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(GpError::Shape("noise variances must be finite and non-negative".into()));
        }
        if self.targets.iter().any(|y| !y.is_finite()) || self.inputs.iter().flatten().any(|x| !x.is_finite()) {
            return Err(GpError::Shape("inputs and targets must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpPosterior {
    pub mean: f64,
    pub variance: f64,
}

impl GpPosterior {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A GP conditioned on a dataset. Immutable; conditioning on more data
/// produces a new model.
#[derive(Clone, Debug)]
pub struct GpModel {
    kernel: SquaredExponential,
    mean: f64,
    data: GpDataset,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    pub fn new(kernel: SquaredExponential, mean: f64, data: GpDataset) -> Result<Self, GpError> {
        kernel.validate()?;
        data.validate()?;
        if let Some(x) = data.inputs.iter().find(|x| x.len() != kernel.lengthscales.len()) {
            return Err(GpError::Shape(format!(
                "input of dimension {} for a kernel of dimension {}",
                x.len(),
                kernel.lengthscales.len()
            )));
        }
        let n = data.len();
        let mut cov = kernel_matrix(&kernel, &data.inputs, &data.inputs);
        for i in 0..n {
            cov[(i, i)] += data.noise_var[i];
        }
        let resid = DVector::from_iterator(n, data.targets.iter().map(|y| y - mean));
        for &jitter in &JITTER_LADDER {
            let mut c = cov.clone();
            for i in 0..n {
                c[(i, i)] += jitter;
            }
            if let Some(chol) = c.cholesky() {
                let l = chol.l();
                if l.iter().all(|v| v.is_finite()) {
                    let alpha = chol.solve(&resid);
                    return Ok(Self { kernel, mean, data, chol_l: l, alpha, jitter });
                }
            }
        }
        Err(GpError::IllConditioned { n, jitter: *JITTER_LADDER.last().unwrap() })
    }

    pub fn kernel(&self) -> &SquaredExponential {
        &self.kernel
    }

    pub fn prior_mean(&self) -> f64 {
        self.mean
    }

    pub fn data(&self) -> &GpDataset {
        &self.data
    }

    /// Jitter that was needed to factorise the covariance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Adds one observation and refactorises.
    pub fn condition(&self, x: Vec<f64>, y: f64, noise_var: f64) -> Result<Self, GpError> {
        let mut data = self.data.clone();
        data.push(x, y, noise_var);
        Self::new(self.kernel.clone(), self.mean, data)
    }

    /// Predictive distribution of the latent function at `x`.
    pub fn posterior(&self, x: &[f64]) -> GpPosterior {
        let prior_var = self.kernel.eval(x, x);
        if self.data.is_empty() {
            return GpPosterior { mean: self.mean, variance: prior_var };
        }
        let k = DVector::from_iterator(self.data.len(), self.data.inputs.iter().map(|xi| self.kernel.eval(x, xi)));
        let mean = self.mean + k.dot(&self.alpha);
        let v = self
            .chol_l
            .solve_lower_triangular(&k)
            .expect("Cholesky factor has a non-zero diagonal");
        let variance = (prior_var - v.dot(&v)).max(0.0);
        GpPosterior { mean, variance }
    }

    /// `log p(y) = -½ rᵀ(K+Σ)⁻¹r - ½ log|K+Σ| - n/2 log 2π`, `r = y - m`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.data.len();
        let quad: f64 = self.data.targets.iter().zip(self.alpha.iter()).map(|(y, a)| (y - self.mean) * a).sum();
        let half_logdet: f64 = self.chol_l.diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * quad - half_logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn snapshot(&self) -> GpSnapshot {
        GpSnapshot { kernel: self.kernel.clone(), mean: self.mean, data: self.data.clone() }
    }
}

/// Serialisable model state; [`GpSnapshot::restore`] refactorises.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub kernel: SquaredExponential,
    pub mean: f64,
    pub data: GpDataset,
}

impl GpSnapshot {
    pub fn restore(self) -> Result<GpModel, GpError> {
        GpModel::new(self.kernel, self.mean, self.data)
    }
}

/// Kernel hyper-parameters plus the single free noise parameter.
///
/// `noise` is the constant noise standard deviation for a homoscedastic
/// model, or the free scale of a heteroscedastic noise model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub amplitude: f64,
    pub lengthscales: Vec<f64>,
    pub noise: f64,
}

impl Theta {
    pub fn kernel(&self) -> SquaredExponential {
        SquaredExponential::new(self.amplitude, self.lengthscales.clone())
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v = vec![self.amplitude.ln()];
        v.extend(self.lengthscales.iter().map(|l| l.ln()));
        v.push(self.noise.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        Self {
            amplitude: v[0].exp(),
            lengthscales: v[1..=d].iter().map(|l| l.exp()).collect(),
            noise: v[d + 1].exp(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub starts: usize,
    /// Width, in decades, of the log-uniform box the extra starts are drawn from.
    pub start_decades: f64,
    pub amplitude_bounds: (f64, f64),
    pub lengthscale_bounds: (f64, f64),
    pub noise_bounds: (f64, f64),
    pub local: NelderMeadOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            start_decades: 3.0,
            amplitude_bounds: (1e-2, 1e4),
            lengthscale_bounds: (1e-3, 1e2),
            noise_bounds: (1e-6, 1e4),
            local: NelderMeadOptions { max_evals: 300, f_tol: 1e-9, initial_step: 0.05 },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub theta: Theta,
    pub lml: f64,
    pub initial_lml: f64,
    /// False when no start improved on `theta0`, in which case `theta0` is returned.
    pub improved: bool,
    /// Best log marginal likelihood after each start, non-decreasing.
    pub history: Vec<f64>,
}

/// Log marginal likelihood of `(inputs, targets)` under `theta`, with the
/// per-point noise variances produced by `noise_var(theta.noise)`.
pub fn lml_at<F>(inputs: &[Vec<f64>], targets: &[f64], mean: f64, noise_var: &F, theta: &Theta) -> f64
where
    F: Fn(f64) -> Vec<f64>,
{
    let data = GpDataset { inputs: inputs.to_vec(), targets: targets.to_vec(), noise_var: noise_var(theta.noise) };
    match GpModel::new(theta.kernel(), mean, data) {
        Ok(m) => {
            let v = m.log_marginal_likelihood();
            if v.is_finite() {
                v
            } else {
                f64::NEG_INFINITY
            }
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Maximum-likelihood kernel and noise hyper-parameters by multi-start
/// Nelder–Mead in log-parameter space. The first start is `theta0`; the
/// rest are drawn log-uniformly around it. Never returns a point with lower
/// likelihood than `theta0`.
pub fn fit_hyperparams<F, R>(
    inputs: &[Vec<f64>],
    targets: &[f64],
    mean: f64,
    noise_var: F,
    theta0: &Theta,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<FitResult, GpError>
where
    F: Fn(f64) -> Vec<f64>,
    R: Rng + ?Sized,
{
    if targets.len() < 2 || inputs.len() != targets.len() {
        return Err(GpError::Shape(format!(
            "hyper-parameter fitting needs at least 2 matched points, got {} inputs and {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let d = theta0.lengthscales.len();
    let mut lo = vec![opts.amplitude_bounds.0.ln()];
    let mut hi = vec![opts.amplitude_bounds.1.ln()];
    lo.extend(std::iter::repeat_n(opts.lengthscale_bounds.0.ln(), d));
    hi.extend(std::iter::repeat_n(opts.lengthscale_bounds.1.ln(), d));
    lo.push(opts.noise_bounds.0.ln());
    hi.push(opts.noise_bounds.1.ln());

    let neg_lml = |v: &[f64]| -lml_at(inputs, targets, mean, &noise_var, &Theta::from_log(v));
    let x0 = theta0.to_log();
    let initial_lml = -neg_lml(&x0);

    let mut best_x = x0.clone();
    let mut best_f = -initial_lml;
    let mut history = Vec::with_capacity(opts.starts);
    let half = 0.5 * opts.start_decades * std::f64::consts::LN_10;
    for s in 0..opts.starts.max(1) {
        let start: Vec<f64> = if s == 0 {
            x0.clone()
        } else {
            x0.iter()
                .zip(lo.iter().zip(&hi))
                .map(|(c, (l, h))| (c + rng.random_range(-half..half)).clamp(*l, *h))
                .collect()
        };
        let m = nelder_mead(neg_lml, &start, &lo, &hi, &opts.local);
        if m.f < best_f {
            best_f = m.f;
            best_x = m.x;
        }
        history.push(-best_f);
    }
    let improved = best_f < -initial_lml;
    let theta = if improved { Theta::from_log(&best_x) } else { theta0.clone() };
    Ok(FitResult { theta, lml: -best_f, initial_lml, improved, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand_distr::{Distribution, StandardNormal};

    fn random_fixture(rng: &mut impl Rng, n: usize, d: usize) -> (SquaredExponential, GpDataset) {
        let kernel = SquaredExponential::new(
            rng.random_range(0.5..3.0),
            (0..d).map(|_| rng.random_range(0.2..1.5)).collect(),
        );
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let targets = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let noise_var = (0..n).map(|_| rng.random_range(0.01..0.5)).collect();
        (kernel, GpDataset { inputs, targets, noise_var })
    }

    // Dense oracle: explicit inverse and determinant through LU.
    fn dense_posterior(kernel: &SquaredExponential, mean: f64, data: &GpDataset, x: &[f64]) -> (f64, f64) {
        let n = data.len();
        let mut c = kernel_matrix(kernel, &data.inputs, &data.inputs);
        for i in 0..n {
            c[(i, i)] += data.noise_var[i];
        }
        let inv = c.try_inverse().unwrap();
        let k = DVector::from_iterator(n, data.inputs.iter().map(|xi| kernel.eval(x, xi)));
        let r = DVector::from_iterator(n, data.targets.iter().map(|y| y - mean));
        let mu = mean + (k.transpose() * &inv * r)[0];
        let var = kernel.eval(x, x) - (k.transpose() * inv * k)[0];
        (mu, var)
    }

    fn dense_lml(kernel: &SquaredExponential, mean: f64, data: &GpDataset) -> f64 {
        let n = data.len();
        let mut c = kernel_matrix(kernel, &data.inputs, &data.inputs);
        for i in 0..n {
            c[(i, i)] += data.noise_var[i];
        }
        let det = c.determinant();
        let inv = c.try_inverse().unwrap();
        let r = DVector::from_iterator(n, data.targets.iter().map(|y| y - mean));
        -0.5 * (r.transpose() * inv * &r)[0] - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    #[test]
    fn kernel_matrix_fixtures() {
        let k = SquaredExponential::new(1.7, vec![0.4]);
        assert_eq!(kernel_matrix(&k, &[vec![0.3]], &[vec![0.3]])[(0, 0)], 1.7 * 1.7);
        let m = kernel_matrix(&k, &[vec![0.3], vec![0.3]], &[vec![0.3], vec![0.3]]);
        assert!(m.iter().all(|v| *v == 1.7 * 1.7));
        assert_eq!(m.rank(1e-12), 1);
        let k1 = SquaredExponential::new(1.0, vec![0.8]);
        let e = kernel_matrix(&k1, &[vec![0.1]], &[vec![0.9]])[(0, 0)];
        assert!((e - (-0.5f64).exp()).abs() < 1e-15);
        assert!((e - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn kernel_matrix_is_symmetric() {
        let mut rng = seed::stream(1, &[]);
        let (k, d) = random_fixture(&mut rng, 7, 2);
        let m = kernel_matrix(&k, &d.inputs, &d.inputs);
        assert_eq!(m, m.transpose());
    }

    #[test]
    fn empty_dataset_recovers_prior() {
        let m = GpModel::new(SquaredExponential::new(2.0, vec![0.5, 0.5]), 50.0, GpDataset::default()).unwrap();
        let p = m.posterior(&[0.2, 0.9]);
        assert_eq!(p, GpPosterior { mean: 50.0, variance: 4.0 });
        assert_eq!(m.log_marginal_likelihood(), 0.0);
    }

    #[test]
    fn noiseless_single_point_interpolates() {
        let data = GpDataset::new(vec![vec![0.4]], vec![3.5], vec![0.0]).unwrap();
        let m = GpModel::new(SquaredExponential::new(1.3, vec![0.3]), 0.0, data).unwrap();
        let p = m.posterior(&[0.4]);
        assert!((p.mean - 3.5).abs() < 1e-10);
        assert!(p.variance.abs() < 1e-10);
    }

    #[test]
    fn matches_dense_oracle_n6() {
        let mut rng = seed::stream(2, &[]);
        let (k, d) = random_fixture(&mut rng, 6, 2);
        let m = GpModel::new(k.clone(), 0.3, d.clone()).unwrap();
        for _ in 0..10 {
            let x = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let p = m.posterior(&x);
            let (mu, var) = dense_posterior(&k, 0.3, &d, &x);
            assert!((p.mean - mu).abs() < 1e-8 && (p.variance - var).abs() < 1e-8);
        }
    }

    #[test]
    fn lml_fixtures() {
        let data = GpDataset::new(vec![vec![0.0]], vec![0.0], vec![0.0]).unwrap();
        let m = GpModel::new(SquaredExponential::new(1.0, vec![1.0]), 0.0, data).unwrap();
        assert!((m.log_marginal_likelihood() + 0.918_938_533_204_672_7).abs() < 1e-12);

        let mut rng = seed::stream(3, &[]);
        let (k, d) = random_fixture(&mut rng, 5, 1);
        let m = GpModel::new(k.clone(), -0.2, d.clone()).unwrap();
        assert!((m.log_marginal_likelihood() - dense_lml(&k, -0.2, &d)).abs() < 1e-9);

        // Zero residuals leave only the determinant and constant terms.
        let zero = GpDataset { targets: vec![1.5; 5], ..d.clone() };
        let m = GpModel::new(k.clone(), 1.5, zero.clone()).unwrap();
        let mut c = kernel_matrix(&k, &zero.inputs, &zero.inputs);
        for i in 0..5 {
            c[(i, i)] += zero.noise_var[i];
        }
        let expected = -0.5 * c.determinant().ln() - 2.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((m.log_marginal_likelihood() - expected).abs() < 1e-9);
    }

    #[test]
    fn random_fixtures_agree_with_dense_oracle() {
        let mut rng = seed::stream(4, &[]);
        for trial in 0..20 {
            let n = 1 + trial % 20;
            let (k, d) = random_fixture(&mut rng, n, 2);
            let m = GpModel::new(k.clone(), 1.0, d.clone()).unwrap();
            assert!((m.log_marginal_likelihood() - dense_lml(&k, 1.0, &d)).abs() < 1e-8);
            let x = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let p = m.posterior(&x);
            let (mu, var) = dense_posterior(&k, 1.0, &d, &x);
            assert!((p.mean - mu).abs() < 1e-8 && (p.variance - var).abs() < 1e-8);
            assert!(p.variance <= k.variance() + 1e-8);
        }
    }

    #[test]
    fn extra_observation_never_increases_variance() {
        let mut rng = seed::stream(5, &[]);
        let (k, d) = random_fixture(&mut rng, 8, 2);
        let queries: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let mut model = GpModel::new(k, 0.0, GpDataset::default()).unwrap();
        for i in 0..d.len() {
            let next = model.condition(d.inputs[i].clone(), d.targets[i], d.noise_var[i]).unwrap();
            for q in &queries {
                assert!(next.posterior(q).variance <= model.posterior(q).variance + 1e-12);
            }
            model = next;
        }
    }

    #[test]
    fn duplicate_noiseless_points_use_jitter() {
        let data = GpDataset::new(vec![vec![0.5], vec![0.5]], vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let m = GpModel::new(SquaredExponential::new(1.0, vec![0.2]), 0.0, data).unwrap();
        assert!(m.jitter() > 0.0);
    }

    #[test]
    fn shape_errors() {
        assert!(GpDataset::new(vec![vec![0.0]], vec![], vec![]).is_err());
        assert!(GpDataset::new(vec![vec![0.0]], vec![1.0], vec![-1.0]).is_err());
        let data = GpDataset::new(vec![vec![0.0, 1.0]], vec![1.0], vec![0.1]).unwrap();
        assert!(GpModel::new(SquaredExponential::new(1.0, vec![1.0]), 0.0, data).is_err());
        assert!(GpModel::new(SquaredExponential::new(-1.0, vec![1.0]), 0.0, GpDataset::default()).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = seed::stream(6, &[]);
        let (k, d) = random_fixture(&mut rng, 4, 2);
        let m = GpModel::new(k, 2.0, d).unwrap();
        let text = serde_json::to_string(&m.snapshot()).unwrap();
        let back: GpSnapshot = serde_json::from_str(&text).unwrap();
        let m2 = back.restore().unwrap();
        assert_eq!(m.posterior(&[0.3, 0.3]), m2.posterior(&[0.3, 0.3]));
    }

    fn sample_prior(rng: &mut impl Rng, theta: &Theta, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let mut c = kernel_matrix(&theta.kernel(), &inputs, &inputs);
        for i in 0..n {
            c[(i, i)] += theta.noise * theta.noise + 1e-10;
        }
        let l = c.cholesky().unwrap().l();
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
        let y = l * z;
        (inputs, y.iter().copied().collect())
    }

    #[test]
    fn recovers_lengthscale_from_prior_samples() {
        let truth = Theta { amplitude: 1.0, lengthscales: vec![0.2], noise: 0.1 };
        let theta0 = Theta { amplitude: 0.5, lengthscales: vec![1.0], noise: 0.5 };
        let mut hits = 0;
        for s in 0..10 {
            let mut rng = seed::stream(70, &[s]);
            let (x, y) = sample_prior(&mut rng, &truth, 40);
            let noise = |p: f64| vec![p * p; 40];
            let fit = fit_hyperparams(&x, &y, 0.0, noise, &theta0, &FitOptions::default(), &mut rng).unwrap();
            let l = fit.theta.lengthscales[0];
            if l > 0.1 && l < 0.4 {
                hits += 1;
            }
            assert!(fit.lml >= fit.initial_lml);
            assert!(fit.history.windows(2).all(|w| w[1] >= w[0]));
        }
        assert!(hits >= 8, "lengthscale recovered in {hits}/10 seeds");
    }

    #[test]
    fn exact_copies_fit_less_noise_than_noisy_copies() {
        let mut rng = seed::stream(71, &[]);
        let truth = Theta { amplitude: 1.0, lengthscales: vec![0.3], noise: 0.01 };
        let (x, y) = sample_prior(&mut rng, &truth, 20);
        let mut xx = x.clone();
        xx.extend(x.iter().cloned());
        let mut exact = y.clone();
        exact.extend(y.iter().copied());
        let mut noisy = y.clone();
        noisy.extend(y.iter().map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + 0.5 * z
        }));
        let theta0 = Theta { amplitude: 1.0, lengthscales: vec![0.3], noise: 0.1 };
        let noise = |p: f64| vec![p * p; 40];
        let opts = FitOptions::default();
        let a = fit_hyperparams(&xx, &exact, 0.0, noise, &theta0, &opts, &mut seed::stream(1, &[])).unwrap();
        let b = fit_hyperparams(&xx, &noisy, 0.0, noise, &theta0, &opts, &mut seed::stream(1, &[])).unwrap();
        assert!(a.theta.noise < b.theta.noise, "{} vs {}", a.theta.noise, b.theta.noise);
    }

    #[test]
    fn fitting_never_regresses_from_theta0() {
        let x = vec![vec![0.1], vec![0.7]];
        let y = vec![0.3, -0.4];
        let noise = |p: f64| vec![p * p; 2];
        let mut rng = seed::stream(72, &[]);
        let theta0 = Theta { amplitude: 0.5, lengthscales: vec![0.3], noise: 0.1 };
        let first = fit_hyperparams(&x, &y, 0.0, noise, &theta0, &FitOptions::default(), &mut rng).unwrap();
        let again = fit_hyperparams(&x, &y, 0.0, noise, &first.theta, &FitOptions::default(), &mut rng).unwrap();
        assert!(again.lml >= lml_at(&x, &y, 0.0, &noise, &first.theta));
        assert!(fit_hyperparams(&x[..1], &y[..1], 0.0, noise, &theta0, &FitOptions::default(), &mut rng).is_err());
    }
}
