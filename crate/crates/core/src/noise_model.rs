//! Parametric input-dependent observation noise
//! `σ_ν(x) = z·exp(βᵀφ(x)) + ζ`, fitted in two stages: a generalised linear
//! trend `ĝ(x) = αᵀφ(x)`, then a regression of the absolute residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{golden_section, nelder_mead, NelderMeadOptions};

/// Default saturation point for the exponent `βᵀφ(x)`.
pub const DEFAULT_EXPONENT_CAP: f64 = 50.0;

/// Mean of `ln|ε|` for standard normal `ε`, i.e. `-(γ + ln 2)/2`.
const LOG_HALF_NORMAL_MEAN: f64 = -0.635_181_422_730_739;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseModelError {
    #[error("feature map: {0}")]
    InvalidMap(String),
    #[error("sample of dimension {got} for a map of dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

/// One observed `(x, g(x))` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub g: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, g: f64) -> Self {
        Self { x, g }
    }
}

/// Feature map `φ`. Inputs are first normalised to the unit box using
/// `lower`/`upper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// `[1, u_1, …, u_1^d, u_2, …, u_2^d, …]`.
    Polynomial { degree: usize, lower: Vec<f64>, upper: Vec<f64> },
    /// Rational-quadratic evaluations against fixed centres (raw coordinates);
    /// `lengthscale` is in normalised units.
    Kernel { centres: Vec<Vec<f64>>, lengthscale: f64, shape: f64, lower: Vec<f64>, upper: Vec<f64> },
}

impl FeatureMap {
    pub fn polynomial(degree: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, NoiseModelError> {
        let m = Self::Polynomial { degree, lower, upper };
        m.validate()?;
        Ok(m)
    }

    /// Kernel features with `count` centres placed by k-means on `inputs`.
    pub fn kernel_from_inputs(
        inputs: &[Vec<f64>],
        count: usize,
        lengthscale: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self, NoiseModelError> {
        if inputs.is_empty() || count == 0 {
            return Err(NoiseModelError::InvalidMap("k-means needs inputs and a positive centre count".into()));
        }
        let centres = kmeans(inputs, count, 50);
        let m = Self::Kernel { centres, lengthscale, shape: 1.0, lower, upper };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), NoiseModelError> {
        let (lower, upper) = self.bounds();
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(NoiseModelError::InvalidMap("bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(upper).any(|(l, h)| !(h > l) || !l.is_finite() || !h.is_finite()) {
            return Err(NoiseModelError::InvalidMap(format!("empty or non-finite box {lower:?}..{upper:?}")));
        }
        if let Self::Kernel { centres, lengthscale, shape, .. } = self {
            if centres.is_empty() || centres.iter().any(|c| c.len() != lower.len()) {
                return Err(NoiseModelError::InvalidMap("kernel centres must match the input dimension".into()));
            }
            if !(*lengthscale > 0.0) || !(*shape > 0.0) {
                return Err(NoiseModelError::InvalidMap("kernel lengthscale and shape must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        match self {
            Self::Polynomial { lower, upper, .. } | Self::Kernel { lower, upper, .. } => (lower, upper),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.bounds().0.len()
    }

    /// Output dimension `m`.
    pub fn dim(&self) -> usize {
        match self {
            Self::Polynomial { degree, lower, .. } => 1 + degree * lower.len(),
            Self::Kernel { centres, .. } => centres.len(),
        }
    }

    /// True when the first feature is the constant 1.
    pub fn has_constant(&self) -> bool {
        matches!(self, Self::Polynomial { .. })
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.bounds();
        x.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| (v - l) / (h - l)).collect()
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let u = self.normalize(x);
        match self {
            Self::Polynomial { degree, .. } => {
                let mut out = Vec::with_capacity(self.dim());
                out.push(1.0);
                for ui in &u {
                    let mut p = 1.0;
                    for _ in 0..*degree {
                        p *= ui;
                        out.push(p);
                    }
                }
                out
            }
            Self::Kernel { centres, lengthscale, shape, .. } => centres
                .iter()
                .map(|c| {
                    let r2: f64 = self.normalize(c).iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum();
                    rational_quadratic(r2, *lengthscale, *shape)
                })
                .collect(),
        }
    }

    fn check(&self, x: &[f64]) -> Result<(), NoiseModelError> {
        if x.len() != self.input_dim() {
            return Err(NoiseModelError::Dimension { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }
}

/// Unit-amplitude RQ kernel as a function of squared distance.
pub fn rational_quadratic(r2: f64, lengthscale: f64, shape: f64) -> f64 {
    (1.0 + r2 / (2.0 * shape * lengthscale * lengthscale)).powf(-shape)
}

/// Lloyd's k-means with farthest-point initialisation from the
/// lexicographically smallest input. Deterministic.
pub fn kmeans(points: &[Vec<f64>], k: usize, iters: usize) -> Vec<Vec<f64>> {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let first = (0..points.len())
        .min_by(|&i, &j| points[i].iter().zip(&points[j]).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap();
    let mut centres = vec![points[first].clone()];
    while centres.len() < k {
        let far = (0..points.len())
            .max_by(|&i, &j| {
                let di = centres.iter().map(|c| dist2(&points[i], c)).fold(f64::INFINITY, f64::min);
                let dj = centres.iter().map(|c| dist2(&points[j], c)).fold(f64::INFINITY, f64::min);
                // Reverse index order on ties so the lowest index wins.
                di.total_cmp(&dj).then(j.cmp(&i))
            })
            .unwrap();
        centres.push(points[far].clone());
    }
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; points[0].len()]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let c = (0..k).min_by(|&a, &b| dist2(p, &centres[a]).total_cmp(&dist2(p, &centres[b]))).unwrap();
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut moved = false;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            if next != centres[c] {
                moved = true;
                centres[c] = next;
            }
        }
        if !moved {
            break;
        }
    }
    centres
}

/// Least squares `min ‖A c − b‖` through the SVD. Falls back to a small ridge
/// penalty when `A` is rank deficient; the flag reports the fallback.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let svd = a.clone().svd(true, true);
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let s = &svd.singular_values;
    let s_max = s.iter().copied().fold(0.0, f64::max);
    let deficient = a.nrows() < a.ncols() || s.iter().any(|&si| si <= 1e-12 * s_max) || s_max == 0.0;
    let rho = if deficient { 1e-8 * s_max.max(1.0).powi(2) } else { 0.0 };
    let utb = u.transpose() * b;
    let scaled = DVector::from_iterator(
        s.len(),
        s.iter().zip(utb.iter()).map(|(&si, &ub)| if deficient { si * ub / (si * si + rho) } else { ub / si }),
    );
    (v_t.transpose() * scaled, deficient)
}

fn design(map: &FeatureMap, xs: &[&[f64]], intercept: bool) -> DMatrix<f64> {
    let m = map.dim() + usize::from(intercept);
    let mut a = DMatrix::zeros(xs.len(), m);
    for (i, x) in xs.iter().enumerate() {
        let phi = map.features(x);
        let off = usize::from(intercept);
        if intercept {
            a[(i, 0)] = 1.0;
        }
        for (j, f) in phi.into_iter().enumerate() {
            a[(i, j + off)] = f;
        }
    }
    a
}

/// Generalised linear trend `ĝ(x) = αᵀφ(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendModel {
    pub alpha: Vec<f64>,
    pub map: FeatureMap,
    #[serde(default)]
    pub regularised: bool,
}

impl TrendModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.map.features(x).iter().zip(&self.alpha).map(|(f, a)| f * a).sum()
    }
}

pub fn fit_trend(samples: &[Sample], map: &FeatureMap) -> Result<TrendModel, NoiseModelError> {
    map.validate()?;
    if samples.is_empty() {
        return Err(NoiseModelError::TooFewSamples { needed: 1, got: 0 });
    }
    for s in samples {
        map.check(&s.x)?;
    }
    let xs: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
    let a = design(map, &xs, false);
    let b = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.g));
    let (alpha, regularised) = least_squares(&a, &b);
    Ok(TrendModel { alpha: alpha.iter().copied().collect(), map: map.clone(), regularised })
}

/// Result of a single noise evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseEval {
    pub std: f64,
    /// The exponent hit the cap and was clamped.
    pub saturated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub z: f64,
    pub beta: Vec<f64>,
    pub zeta: f64,
    pub map: FeatureMap,
    #[serde(default = "default_cap")]
    pub exponent_cap: f64,
}

fn default_cap() -> f64 {
    DEFAULT_EXPONENT_CAP
}

impl NoiseModel {
    pub fn new(z: f64, beta: Vec<f64>, zeta: f64, map: FeatureMap) -> Self {
        Self { z, beta, zeta, map, exponent_cap: DEFAULT_EXPONENT_CAP }
    }

    /// `σ_ν ≡ c`.
    pub fn constant(c: f64, map: FeatureMap) -> Self {
        let m = map.dim();
        Self::new(0.0, vec![0.0; m], c, map)
    }

    pub fn is_homoscedastic(&self) -> bool {
        self.z == 0.0
    }

    pub fn eval(&self, x: &[f64]) -> NoiseEval {
        if self.z == 0.0 {
            return NoiseEval { std: self.zeta, saturated: false };
        }
        let e: f64 = self.map.features(x).iter().zip(&self.beta).map(|(f, b)| f * b).sum();
        let saturated = !(e <= self.exponent_cap);
        let e = if saturated { self.exponent_cap } else { e };
        NoiseEval { std: self.z * e.exp() + self.zeta, saturated }
    }

    pub fn noise_std(&self, x: &[f64]) -> f64 {
        self.eval(x).std
    }

    /// The parameter re-fitted by the GP marginal likelihood: `z`, or `ζ`
    /// for a constant model.
    pub fn free_parameter(&self) -> f64 {
        if self.is_homoscedastic() {
            self.zeta
        } else {
            self.z
        }
    }

    pub fn with_free_parameter(&self, p: f64) -> Self {
        let mut m = self.clone();
        if m.is_homoscedastic() {
            m.zeta = p;
        } else {
            m.z = p;
        }
        m
    }
}

/// Loss used when refining `z` and `ζ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineLoss {
    /// `Σ (q_i - √(2/π)·σ_ν(x_i))²`, the half-normal mean matched to `q`.
    SquaredError,
    /// Gaussian negative log-likelihood `Σ log σ_ν² + q²/σ_ν²`.
    #[default]
    GaussianNll,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseFitOptions {
    /// Residuals are all considered zero below this.
    pub zero_tol: f64,
    /// Floor for `q - ζ̂₀` as a fraction of the mean residual.
    pub floor_fraction: f64,
    /// Quantile of the residuals used as the initial `ζ̂₀`.
    pub zeta_quantile: f64,
    pub loss: RefineLoss,
    /// Alternating `z`/`ζ` refinement rounds.
    pub rounds: usize,
    /// Finish with a joint likelihood refinement of `(z, β, ζ)`.
    pub joint: bool,
    /// Per-sample ridge penalty on the non-constant `β`.
    pub ridge: f64,
}

impl Default for NoiseFitOptions {
    fn default() -> Self {
        Self { zero_tol: 1e-9, floor_fraction: 0.05, zeta_quantile: 0.25, loss: RefineLoss::GaussianNll, rounds: 3, joint: true, ridge: 1e-4 }
    }
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

fn refine_loss(loss: RefineLoss, q: &[f64], sigma: impl Iterator<Item = f64>) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    q.iter()
        .zip(sigma)
        .map(|(qi, s)| match loss {
            RefineLoss::SquaredError => (qi - c * s).powi(2),
            RefineLoss::GaussianNll => {
                let v = (s * s).max(1e-300);
                v.ln() + qi * qi / v
            }
        })
        .sum()
}

/// Fits `(z, β, ζ)` to the absolute residuals `q = |g - ĝ|` of `samples`.
pub fn fit_noise(
    samples: &[Sample],
    trend: &TrendModel,
    map: &FeatureMap,
    opts: &NoiseFitOptions,
) -> Result<NoiseModel, NoiseModelError> {
    map.validate()?;
    let intercept = !map.has_constant();
    let needed = map.dim() + usize::from(intercept);
    if samples.len() < 2 {
        return Err(NoiseModelError::TooFewSamples { needed, got: samples.len() });
    }
    for s in samples {
        map.check(&s.x)?;
    }
    let q: Vec<f64> = samples.iter().map(|s| (s.g - trend.predict(&s.x)).abs()).collect();
    let n = q.len() as f64;
    let mean_q = q.iter().sum::<f64>() / n;
    if q.iter().all(|&v| v < opts.zero_tol) {
        return Ok(NoiseModel::constant(mean_q, map.clone()));
    }

    let zeta0 = quantile(&q, opts.zeta_quantile);
    let floor = (opts.floor_fraction * mean_q).max(opts.zero_tol);
    let xs: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
    let a = design(map, &xs, intercept);
    let t = DVector::from_iterator(q.len(), q.iter().map(|&qi| (qi - zeta0).max(floor).ln() - LOG_HALF_NORMAL_MEAN));
    // The ridge rows leave the first column (constant or intercept) free.
    let (c, _) = if opts.ridge > 0.0 {
        let (rows, k) = a.shape();
        let mut aug = DMatrix::zeros(rows + k - 1, k);
        aug.rows_mut(0, rows).copy_from(&a);
        let w = (n * opts.ridge).sqrt();
        for j in 1..k {
            aug[(rows + j - 1, j)] = w;
        }
        let mut tt = DVector::zeros(aug.nrows());
        tt.rows_mut(0, rows).copy_from(&t);
        least_squares(&aug, &tt)
    } else {
        least_squares(&a, &t)
    };
    let z0 = c[0].exp();
    let mut beta: Vec<f64> = c.iter().skip(usize::from(intercept)).copied().collect();
    if !intercept {
        beta[0] = 0.0;
    }

    let shapes: Vec<f64> = xs
        .iter()
        .map(|x| {
            let e: f64 = map.features(x).iter().zip(&beta).map(|(f, b)| f * b).sum();
            e.min(DEFAULT_EXPONENT_CAP).exp()
        })
        .collect();
    let q_max = q.iter().copied().fold(0.0, f64::max);
    let loss_at = |z: f64, zeta: f64| refine_loss(opts.loss, &q, shapes.iter().map(|s| z * s + zeta));

    let (mut z, mut zeta) = (z0.min(f64::MAX), zeta0);
    for _ in 0..opts.rounds.max(1) {
        let lz = z.max(1e-300).ln();
        let (best_lz, f_z) = golden_section(|v| loss_at(v.exp(), zeta), lz - 6.0, lz + 6.0, 60);
        // Also consider dropping the input-dependent part entirely.
        z = if loss_at(0.0, zeta) < f_z { 0.0 } else { best_lz.exp() };
        let (best_zeta, _) = golden_section(|v| loss_at(z, v), 0.0, q_max, 60);
        zeta = best_zeta;
        if z == 0.0 {
            break;
        }
    }
    if z > 0.0 && opts.joint {
        (z, beta, zeta) = joint_refine(&xs, &q, map, z, beta, zeta, intercept, opts.ridge);
    }
    if z == 0.0 {
        let mut m = NoiseModel::constant(zeta, map.clone());
        if zeta == 0.0 {
            m.zeta = mean_q;
        }
        return Ok(m);
    }
    Ok(NoiseModel::new(z, beta, zeta, map.clone()))
}

/// Gaussian-likelihood polish of all noise parameters, starting from the
/// two-stage estimate. Parameters: `ln z`, the non-constant `β`, `ln ζ`.
fn joint_refine(
    xs: &[&[f64]],
    q: &[f64],
    map: &FeatureMap,
    z: f64,
    beta: Vec<f64>,
    zeta: f64,
    intercept: bool,
    ridge: f64,
) -> (f64, Vec<f64>, f64) {
    let phi: Vec<Vec<f64>> = xs.iter().map(|x| map.features(x)).collect();
    let skip = usize::from(!intercept);
    let m = beta.len() - skip;
    let q_max = q.iter().copied().fold(0.0, f64::max);
    let zeta_lo = 1e-6 * q_max;
    let unpack = |p: &[f64]| {
        let mut b = beta.clone();
        b[skip..].copy_from_slice(&p[1..=m]);
        (p[0].exp(), b, p[m + 1].exp())
    };
    let nll = |p: &[f64]| {
        let (z, b, zeta) = unpack(p);
        let sig = phi.iter().map(|f| {
            let e: f64 = f.iter().zip(&b).map(|(a, c)| a * c).sum();
            z * e.min(DEFAULT_EXPONENT_CAP).exp() + zeta
        });
        let penalty: f64 = p[1..=m].iter().map(|b| b * b).sum::<f64>() * ridge * q.len() as f64;
        refine_loss(RefineLoss::GaussianNll, q, sig) + penalty
    };
    let mut p0 = vec![z.ln()];
    p0.extend_from_slice(&beta[skip..]);
    p0.push(zeta.max(zeta_lo).ln());
    let spread = 20.0;
    let mut lo: Vec<f64> = p0.iter().map(|v| v - spread).collect();
    let mut hi: Vec<f64> = p0.iter().map(|v| v + spread).collect();
    lo[m + 1] = zeta_lo.ln();
    hi[m + 1] = q_max.max(zeta_lo).ln();
    p0[m + 1] = p0[m + 1].clamp(lo[m + 1], hi[m + 1]);
    let opts = NelderMeadOptions { max_evals: 200 * (m + 2), f_tol: 1e-12, initial_step: 0.01 };
    let start_f = nll(&p0);
    let best = nelder_mead(nll, &p0, &lo, &hi, &opts);
    if best.f < start_f {
        unpack(&best.x)
    } else {
        (z, beta, zeta)
    }
}

/// Root-mean-square difference between the fitted `σ_ν` and `truth` over
/// `grid`.
pub fn tracking_error(model: &NoiseModel, truth: impl Fn(&[f64]) -> f64, grid: &[Vec<f64>]) -> f64 {
    let sq: f64 = grid.iter().map(|x| (model.noise_std(x) - truth(x)).powi(2)).sum();
    (sq / grid.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_poly(d: usize) -> FeatureMap {
        FeatureMap::polynomial(d, vec![0.0], vec![1.0]).unwrap()
    }

    #[test]
    fn polynomial_features() {
        assert_eq!(unit_poly(1).features(&[0.5]), vec![1.0, 0.5]);
        assert_eq!(unit_poly(10).features(&[1.0]), vec![1.0; 11]);
        let m = FeatureMap::polynomial(2, vec![0.0, -1.0], vec![2.0, 1.0]).unwrap();
        assert_eq!(m.dim(), 5);
        assert_eq!(m.features(&[1.0, 0.0]), vec![1.0, 0.5, 0.25, 0.5, 0.25]);
    }

    #[test]
    fn kernel_features_at_centre() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let m = FeatureMap::kernel_from_inputs(&pts, 5, 0.2, vec![0.0], vec![1.0]).unwrap();
        let FeatureMap::Kernel { centres, .. } = &m else { unreachable!() };
        assert_eq!(centres.len(), 5);
        let phi = m.features(&centres[0].clone());
        assert!((phi[0] - 1.0).abs() < 1e-15);
        assert!(phi.iter().all(|v| *v > 0.0 && *v <= 1.0));
        // k(r) = (1 + r²/(2αℓ²))^-α at α = 1, r = ℓ gives 2/3.
        assert!((rational_quadratic(0.04, 0.2, 1.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kmeans_separates_clusters() {
        let mut pts = vec![];
        for i in 0..10 {
            pts.push(vec![0.1 + 0.001 * i as f64]);
            pts.push(vec![0.9 - 0.001 * i as f64]);
        }
        let mut c = kmeans(&pts, 2, 50);
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!((c[0][0] - 0.1045).abs() < 1e-9 && (c[1][0] - 0.8955).abs() < 1e-9);
        assert_eq!(kmeans(&pts, 2, 50), kmeans(&pts, 2, 50));
    }

    #[test]
    fn noise_std_fixtures() {
        let map = unit_poly(1);
        let m = NoiseModel::new(0.0, vec![3.0, 4.0], 0.7, map.clone());
        assert_eq!(m.noise_std(&[0.3]), 0.7);
        let m = NoiseModel::new(1.0, vec![0.0, 0.0], 0.0, map.clone());
        assert_eq!(m.noise_std(&[0.9]), 1.0);
        let m = NoiseModel::new(1.0, vec![0.0, 1.0], 0.5, map.clone());
        assert!((m.noise_std(&[2f64.ln()]) - 2.5).abs() < 1e-14);
    }

    #[test]
    fn exponent_saturates() {
        let m = NoiseModel::new(1.0, vec![0.0, 1e4], 0.0, unit_poly(1));
        let e = m.eval(&[1.0]);
        assert!(e.saturated && e.std.is_finite());
        assert_eq!(e.std, DEFAULT_EXPONENT_CAP.exp());
        assert!(!m.eval(&[0.0]).saturated);
    }

    #[test]
    fn free_parameter_swaps_scale_or_floor() {
        let m = NoiseModel::constant(2.0, unit_poly(3));
        assert_eq!(m.free_parameter(), 2.0);
        assert_eq!(m.with_free_parameter(5.0).noise_std(&[0.4]), 5.0);
        let h = NoiseModel::new(1.0, vec![0.0, 1.0, 0.0, 0.0], 0.5, unit_poly(3));
        assert_eq!(h.with_free_parameter(2.0).z, 2.0);
    }

    #[test]
    fn trend_fixtures() {
        let samples: Vec<Sample> = (0..10).map(|i| Sample::new(vec![i as f64 / 9.0], 3.0 - 2.0 * i as f64 / 9.0)).collect();
        let t = fit_trend(&samples, &unit_poly(1)).unwrap();
        assert!(samples.iter().all(|s| (t.predict(&s.x) - s.g).abs() < 1e-10));
        assert!(!t.regularised);
        let flat: Vec<Sample> = (0..10).map(|i| Sample::new(vec![i as f64 / 9.0], 4.2)).collect();
        let t = fit_trend(&flat, &unit_poly(3)).unwrap();
        assert!((t.alpha[0] - 4.2).abs() < 1e-10 && t.alpha[1..].iter().all(|a| a.abs() < 1e-9));
        let t = fit_trend(&flat[..2], &unit_poly(5)).unwrap();
        assert!(t.regularised);
        assert!((t.predict(&[0.0]) - 4.2).abs() < 1e-6);
    }

    #[test]
    fn higher_degree_trend_fits_cubic_better() {
        let mut rng = seed::stream(11, &[]);
        let samples: Vec<Sample> = (0..200)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..1.0);
                let e: f64 = StandardNormal.sample(&mut rng);
                Sample::new(vec![x], 20.0 * x.powi(3) - 15.0 * x * x + 2.0 * x + 0.3 * e)
            })
            .collect();
        let rmse = |d| {
            let t = fit_trend(&samples, &unit_poly(d)).unwrap();
            (samples.iter().map(|s| (t.predict(&s.x) - s.g).powi(2)).sum::<f64>() / 200.0).sqrt()
        };
        assert!(rmse(10) < rmse(1));
    }

    #[test]
    fn recovers_exponential_noise() {
        let map = unit_poly(3);
        let truth = |x: f64| 0.1 + (2.0 * x).exp();
        let mut rng = seed::stream(12, &[]);
        let samples: Vec<Sample> = (0..200)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..1.0);
                let e: f64 = StandardNormal.sample(&mut rng);
                Sample::new(vec![x], 5.0 - x + truth(x) * e)
            })
            .collect();
        let trend = fit_trend(&samples, &map).unwrap();
        let m = fit_noise(&samples, &trend, &map, &NoiseFitOptions::default()).unwrap();
        for i in 0..5 {
            let x = (i as f64 + 0.5) / 5.0;
            let r = m.noise_std(&[x]) / truth(x);
            assert!((0.7..=1.3).contains(&r), "x={x} ratio {r}");
        }
    }

    #[test]
    fn constant_residuals_recover_constant() {
        let samples: Vec<Sample> =
            (0..100).map(|i| Sample::new(vec![i as f64 / 99.0], if i % 2 == 0 { 1.5 } else { -1.5 })).collect();
        let trend = TrendModel { alpha: vec![0.0, 0.0], map: unit_poly(1), regularised: false };
        let m = fit_noise(&samples, &trend, &unit_poly(1), &NoiseFitOptions::default()).unwrap();
        for x in [0.0, 0.5, 1.0] {
            assert!((m.noise_std(&[x]) / 1.5 - 1.0).abs() < 0.1, "{m:?}");
        }
    }

    #[test]
    fn zero_residuals_give_homoscedastic_model() {
        let samples: Vec<Sample> = (0..10).map(|i| Sample::new(vec![i as f64 / 9.0], 2.0)).collect();
        let trend = fit_trend(&samples, &unit_poly(1)).unwrap();
        let m = fit_noise(&samples, &trend, &unit_poly(1), &NoiseFitOptions::default()).unwrap();
        assert!(m.is_homoscedastic());
        assert!(m.zeta < 1e-9);
    }

    #[test]
    fn increasing_variance_fit_is_monotone() {
        use crate::synthetic::IncreasingVariance as F;
        let samples = F::samples(F::DEFAULT_SAMPLES, &mut seed::stream(13, &[]));
        let grid = F::grid(101);
        for degree in [1, 10] {
            let map = F::polynomial_map(degree);
            let trend = fit_trend(&samples, &map).unwrap();
            let m = fit_noise(&samples, &trend, &map, &NoiseFitOptions::default()).unwrap();
            let v: Vec<f64> = grid.iter().map(|x| m.noise_std(x)).collect();
            assert!(v.windows(2).all(|w| w[1] >= w[0]), "degree {degree}");
        }
    }

    #[test]
    fn kernel_map_fit_tracks_concentrated_noise() {
        let mut rng = seed::stream(14, &[]);
        let truth = |x: f64| 0.2 + 3.0 * (-((x - 0.6) / 0.1).powi(2)).exp();
        let samples: Vec<Sample> = (0..400)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..1.0);
                let e: f64 = StandardNormal.sample(&mut rng);
                Sample::new(vec![x], 1.0 + truth(x) * e)
            })
            .collect();
        let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
        let map = FeatureMap::kernel_from_inputs(&inputs, 5, 0.2, vec![0.0], vec![1.0]).unwrap();
        let trend = fit_trend(&samples, &unit_poly(1)).unwrap();
        let m = fit_noise(&samples, &trend, &map, &NoiseFitOptions::default()).unwrap();
        assert!(m.noise_std(&[0.6]) > 3.0 * m.noise_std(&[0.1]), "{m:?}");
        assert!(m.noise_std(&[0.6]) > 3.0 * m.noise_std(&[0.95]), "{m:?}");
    }

    #[test]
    fn dimension_errors() {
        let s = vec![Sample::new(vec![0.1, 0.2], 1.0)];
        assert!(matches!(fit_trend(&s, &unit_poly(1)), Err(NoiseModelError::Dimension { .. })));
        assert!(FeatureMap::polynomial(1, vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let m = NoiseModel::new(0.3, vec![0.0, 1.0, -0.5], 0.2, unit_poly(2));
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<NoiseModel>(&s).unwrap(), m);
    }
}
