//! Generative fixtures with known noise structure, used by the tests, the
//! acceptance suite and the `fit-noise` command.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bayesopt::{BoError, EpisodeOutcome, Objective, SearchBox};
use crate::noise_model::{FeatureMap, NoiseModel, Sample};
use crate::seed;

/// Reference noise model on `[0, 1]` with cubic features.
pub fn cubic_noise_truth() -> NoiseModel {
    let map = FeatureMap::polynomial(3, vec![0.0], vec![1.0]).expect("valid box");
    NoiseModel::new(0.5, vec![0.0, 1.0, 1.5, -1.0], 0.2, map)
}

/// `n` samples `g = 10 - 3x + 2x² + σ_ν(x)·ε` with `x ~ U[0, 1]` and `σ_ν`
/// from [`cubic_noise_truth`].
pub fn cubic_noise_samples<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Sample> {
    let truth = cubic_noise_truth();
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.0..1.0);
            let e: f64 = StandardNormal.sample(rng);
            Sample::new(vec![x], 10.0 - 3.0 * x + 2.0 * x * x + truth.noise_std(&[x]) * e)
        })
        .collect()
}

/// Episode-reward-like data over a temperature range `[0, 1.2]`: the mean
/// falls linearly with `x` while the spread `1 + exp(2u + 2u¹⁰)`,
/// `u = x / 1.2`, rises gradually and then steeply near the upper end.
#[derive(Clone, Copy, Debug)]
pub struct IncreasingVariance;

impl IncreasingVariance {
    pub const LOWER: f64 = 0.0;
    pub const UPPER: f64 = 1.2;
    pub const DEFAULT_SAMPLES: usize = 1500;

    pub fn mean(x: f64) -> f64 {
        80.0 - 30.0 * x
    }

    /// The true spread as a degree-10 noise model.
    pub fn truth() -> NoiseModel {
        let mut beta = vec![0.0; 11];
        beta[1] = 2.0;
        beta[10] = 2.0;
        NoiseModel::new(1.0, beta, 1.0, Self::polynomial_map(10))
    }

    pub fn std(x: f64) -> f64 {
        let u = (x - Self::LOWER) / (Self::UPPER - Self::LOWER);
        1.0 + (2.0 * u + 2.0 * u.powi(10)).exp()
    }

    pub fn samples<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(Self::LOWER..Self::UPPER);
                let e: f64 = StandardNormal.sample(rng);
                Sample::new(vec![x], Self::mean(x) + Self::std(x) * e)
            })
            .collect()
    }

    /// `n` equispaced points spanning the box, ends included.
    pub fn grid(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![Self::LOWER + (Self::UPPER - Self::LOWER) * i as f64 / (n - 1) as f64]).collect()
    }

    pub fn polynomial_map(degree: usize) -> FeatureMap {
        FeatureMap::polynomial(degree, vec![Self::LOWER], vec![Self::UPPER]).expect("valid box")
    }
}

/// One-dimensional benchmark on `[0, 1]`: a Gaussian bump in a quiet
/// region while the per-episode noise standard deviation
/// `base + slope·x^power` grows steeply toward the upper end.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroBenchmark {
    /// Height, centre and width of the bump.
    pub peak: (f64, f64, f64),
    /// `(base, slope, power)` of the noise standard deviation.
    pub noise: (f64, f64, f64),
}

impl Default for HeteroBenchmark {
    fn default() -> Self {
        Self { peak: (60.0, 0.2, 0.1), noise: (1.0, 120.0, 4.0) }
    }
}

impl HeteroBenchmark {
    pub fn mean(&self, x: f64) -> f64 {
        let (h, c, w) = self.peak;
        h * (-((x - c) / w).powi(2)).exp()
    }

    pub fn noise_std(&self, x: f64) -> f64 {
        let (b, s, p) = self.noise;
        b + s * x.powf(p)
    }

    /// Maximiser of the mean by a grid scan at resolution 1e-5.
    pub fn argmax(&self) -> f64 {
        (0..=100_000)
            .map(|i| i as f64 * 1e-5)
            .fold((0.0, f64::NEG_INFINITY), |best, x| {
                let v = self.mean(x);
                if v > best.1 {
                    (x, v)
                } else {
                    best
                }
            })
            .0
    }

    /// `max f - f(x)`.
    pub fn regret(&self, x: f64) -> f64 {
        self.mean(self.argmax()) - self.mean(x)
    }
}

impl Objective for HeteroBenchmark {
    fn search_box(&self) -> SearchBox {
        SearchBox { lower: vec![0.0], upper: vec![1.0] }
    }

    fn param_names(&self) -> Vec<String> {
        vec!["x".into()]
    }

    fn evaluate(&self, x: &[f64], repeats: usize, seed: u64) -> Result<Vec<EpisodeOutcome>, BoError> {
        let [x] = x else {
            return Err(BoError::Config(format!("benchmark is one-dimensional, got {x:?}")));
        };
        Ok((0..repeats as u64)
            .map(|j| {
                let e: f64 = StandardNormal.sample(&mut seed::stream(seed, &[j]));
                EpisodeOutcome { ret: self.mean(*x) + self.noise_std(*x) * e, truncated: false }
            })
            .collect())
    }
}
