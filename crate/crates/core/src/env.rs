//! Classic control plants integrated with RK4.
//!
//! Three plants are provided: a torque-driven simple pendulum, a cart-pole
//! driven by a horizontal force on the cart and the two-link underactuated
//! acrobot with torque on the second joint. Plants are immutable values;
//! `step` and `reward` are pure functions of their inputs.
//!
//! Angle conventions: the pendulum angle and the cart-pole pole angle are
//! measured from upright (0 = upright). Acrobot angles are measured from the
//! hanging position, the second angle relative to the first link.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest state dimension across the plants.
pub const MAX_STATE_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("state has dimension {got}, plant expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite state {0:?}")]
    NonFinite(Vec<f64>),
    #[error("invalid plant: {0}")]
    InvalidPlant(String),
}

/// Plant state vector. Layouts:
/// pendulum `(angle, angular velocity)`,
/// cart-pole `(position, velocity, pole angle, pole angular velocity)`,
/// acrobot `(angle 1, angle 2, angular velocity 1, angular velocity 2)`.
#[derive(Clone, Copy, PartialEq)]
pub struct State {
    values: [f64; MAX_STATE_DIM],
    dim: usize,
}

impl State {
    pub fn new(values: &[f64]) -> Self {
        assert!(values.len() <= MAX_STATE_DIM, "state dimension {} too large", values.len());
        let mut v = [0.0; MAX_STATE_DIM];
        v[..values.len()].copy_from_slice(values);
        Self { values: v, dim: values.len() }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(&[0.0; MAX_STATE_DIM][..dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }

    fn axpy(&self, h: f64, d: &[f64; MAX_STATE_DIM]) -> Self {
        let mut out = *self;
        for i in 0..self.dim {
            out.values[i] += h * d[i];
        }
        out
    }
}

impl std::ops::Index<usize> for State {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

impl fmt::Debug for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Pendulum,
    Cartpole,
    Acrobot,
}

impl PlantKind {
    pub const ALL: [PlantKind; 3] = [PlantKind::Pendulum, PlantKind::Cartpole, PlantKind::Acrobot];

    pub fn name(self) -> &'static str {
        match self {
            PlantKind::Pendulum => "pendulum",
            PlantKind::Cartpole => "cartpole",
            PlantKind::Acrobot => "acrobot",
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            PlantKind::Pendulum => 2,
            PlantKind::Cartpole | PlantKind::Acrobot => 4,
        }
    }

    /// Default episode length in control steps.
    pub fn default_episode_len(self) -> usize {
        match self {
            PlantKind::Pendulum | PlantKind::Cartpole => 200,
            PlantKind::Acrobot => 400,
        }
    }

    /// Analytic upper bound of the state reward, used to turn rewards into
    /// non-negative costs.
    pub fn reward_upper_bound(self) -> f64 {
        match self {
            PlantKind::Pendulum => 4000.0,
            PlantKind::Cartpole => 0.0,
            PlantKind::Acrobot => 2.0,
        }
    }
}

impl fmt::Display for PlantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PlantKind {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlantKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| EnvError::InvalidPlant(format!("unknown plant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    /// Viscous damping at the joint (N·m·s).
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Full pole length; the pole is a uniform rod.
    pub pole_length: f64,
    pub gravity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcrobotParams {
    pub link_mass_1: f64,
    pub link_mass_2: f64,
    pub link_length_1: f64,
    /// Distance from each joint to the centre of mass of its link.
    pub link_com_1: f64,
    pub link_com_2: f64,
    pub link_moi: f64,
    pub gravity: f64,
}

/// Physical model of a plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Dynamics {
    Pendulum(PendulumParams),
    Cartpole(CartpoleParams),
    Acrobot(AcrobotParams),
}

/// Uniform box distribution over initial states: `center ± half_width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDistribution {
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plant {
    pub dynamics: Dynamics,
    /// Integration step (s).
    pub dt: f64,
    pub action_low: f64,
    pub action_high: f64,
    pub initial: InitialDistribution,
}

impl Plant {
    pub fn pendulum() -> Self {
        Self {
            dynamics: Dynamics::Pendulum(PendulumParams {
                mass: 1.0,
                length: 0.5,
                gravity: 9.81,
                damping: 0.0,
            }),
            dt: 0.05,
            action_low: -2.0,
            action_high: 2.0,
            initial: InitialDistribution { center: vec![PI, 0.0], half_width: vec![0.1, 0.0] },
        }
    }

    pub fn cartpole() -> Self {
        Self {
            dynamics: Dynamics::Cartpole(CartpoleParams {
                cart_mass: 1.0,
                pole_mass: 1.0,
                pole_length: 1.0,
                gravity: 9.81,
            }),
            dt: 0.05,
            action_low: -10.0,
            action_high: 10.0,
            initial: InitialDistribution {
                center: vec![0.0; 4],
                half_width: vec![0.05, 0.05, 0.2, 0.05],
            },
        }
    }

    pub fn acrobot() -> Self {
        Self {
            dynamics: Dynamics::Acrobot(AcrobotParams {
                link_mass_1: 1.0,
                link_mass_2: 1.0,
                link_length_1: 1.0,
                link_com_1: 0.5,
                link_com_2: 0.5,
                link_moi: 1.0,
                gravity: 9.81,
            }),
            dt: 0.05,
            action_low: -5.0,
            action_high: 5.0,
            initial: InitialDistribution { center: vec![0.0; 4], half_width: vec![0.1; 4] },
        }
    }

    pub fn from_kind(kind: PlantKind) -> Self {
        match kind {
            PlantKind::Pendulum => Self::pendulum(),
            PlantKind::Cartpole => Self::cartpole(),
            PlantKind::Acrobot => Self::acrobot(),
        }
    }

    pub fn kind(&self) -> PlantKind {
        match self.dynamics {
            Dynamics::Pendulum(_) => PlantKind::Pendulum,
            Dynamics::Cartpole(_) => PlantKind::Cartpole,
            Dynamics::Acrobot(_) => PlantKind::Acrobot,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.kind().state_dim()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidPlant(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive and finite");
        }
        if !(self.action_low.is_finite() && self.action_high.is_finite() && self.action_low < self.action_high) {
            return bad("action bounds must be finite with low < high");
        }
        let d = self.state_dim();
        if self.initial.center.len() != d || self.initial.half_width.len() != d {
            return bad("initial distribution dimension does not match the plant");
        }
        if self.initial.half_width.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return bad("initial half-widths must be finite and non-negative");
        }
        let positive = match &self.dynamics {
            Dynamics::Pendulum(p) => vec![p.mass, p.length],
            Dynamics::Cartpole(p) => vec![p.cart_mass, p.pole_mass, p.pole_length],
            Dynamics::Acrobot(p) => vec![p.link_mass_1, p.link_mass_2, p.link_length_1, p.link_moi],
        };
        if positive.iter().any(|v| !(*v > 0.0)) {
            return bad("masses, lengths and inertias must be positive");
        }
        Ok(())
    }

    pub fn clamp_action(&self, a: f64) -> f64 {
        a.clamp(self.action_low, self.action_high)
    }

    fn check(&self, s: &State) -> Result<(), EnvError> {
        let expected = self.state_dim();
        if s.dim() != expected {
            return Err(EnvError::DimensionMismatch { expected, got: s.dim() });
        }
        if !s.is_finite() {
            return Err(EnvError::NonFinite(s.as_slice().to_vec()));
        }
        Ok(())
    }

    /// Time derivative of the state under action `a` (already clamped).
    pub fn derivative(&self, s: &State, a: f64) -> [f64; MAX_STATE_DIM] {
        let mut d = [0.0; MAX_STATE_DIM];
        match &self.dynamics {
            Dynamics::Pendulum(p) => {
                let inertia = p.mass * p.length * p.length;
                d[0] = s[1];
                d[1] = p.gravity / p.length * s[0].sin() + (a - p.damping * s[1]) / inertia;
            }
            Dynamics::Cartpole(p) => {
                let (theta, omega) = (s[2], s[3]);
                let (sin, cos) = theta.sin_cos();
                let total = p.cart_mass + p.pole_mass;
                let half = 0.5 * p.pole_length;
                let temp = (a + p.pole_mass * half * omega * omega * sin) / total;
                let theta_acc =
                    (p.gravity * sin - cos * temp) / (half * (4.0 / 3.0 - p.pole_mass * cos * cos / total));
                let x_acc = temp - p.pole_mass * half * theta_acc * cos / total;
                d[0] = s[1];
                d[1] = x_acc;
                d[2] = omega;
                d[3] = theta_acc;
            }
            Dynamics::Acrobot(p) => {
                let (t1, t2, w1, w2) = (s[0], s[1], s[2], s[3]);
                let (m1, m2, l1) = (p.link_mass_1, p.link_mass_2, p.link_length_1);
                let (lc1, lc2, moi, g) = (p.link_com_1, p.link_com_2, p.link_moi, p.gravity);
                let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * t2.cos()) + 2.0 * moi;
                let d2 = m2 * (lc2 * lc2 + l1 * lc2 * t2.cos()) + moi;
                let phi2 = m2 * lc2 * g * (t1 + t2 - PI / 2.0).cos();
                let phi1 = -m2 * l1 * lc2 * w2 * w2 * t2.sin() - 2.0 * m2 * l1 * lc2 * w2 * w1 * t2.sin()
                    + (m1 * lc1 + m2 * l1) * g * (t1 - PI / 2.0).cos()
                    + phi2;
                let acc2 = (a + d2 / d1 * phi1 - m2 * l1 * lc2 * w1 * w1 * t2.sin() - phi2)
                    / (m2 * lc2 * lc2 + moi - d2 * d2 / d1);
                let acc1 = -(d2 * acc2 + phi1) / d1;
                d[0] = w1;
                d[1] = w2;
                d[2] = acc1;
                d[3] = acc2;
            }
        }
        d
    }

    /// One RK4 step of length `dt`. Out-of-bounds actions are clamped.
    pub fn step(&self, s: &State, a: f64) -> Result<State, EnvError> {
        self.check(s)?;
        let a = self.clamp_action(a);
        let h = self.dt;
        let k1 = self.derivative(s, a);
        let k2 = self.derivative(&s.axpy(0.5 * h, &k1), a);
        let k3 = self.derivative(&s.axpy(0.5 * h, &k2), a);
        let k4 = self.derivative(&s.axpy(h, &k3), a);
        let mut next = *s;
        for i in 0..s.dim() {
            next.values[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !next.is_finite() {
            return Err(EnvError::NonFinite(next.as_slice().to_vec()));
        }
        Ok(next)
    }

    /// Instant state reward. The action does not enter any of the three
    /// reward functions.
    pub fn reward(&self, s: &State, _a: f64) -> Result<f64, EnvError> {
        self.check(s)?;
        Ok(self.reward_unchecked(s))
    }

    fn reward_unchecked(&self, s: &State) -> f64 {
        match self.kind() {
            PlantKind::Acrobot => s[0].cos() - (s[0] + s[1]).cos(),
            PlantKind::Cartpole => {
                let sin = s[2].sin();
                -(s[0] * s[0] + 500.0 * sin * sin + s[1] * s[1] + s[3] * s[3])
            }
            PlantKind::Pendulum => {
                let c = s[0].cos() - 1.0;
                -(50.0 * c * c + s[1] * s[1]) + 4000.0
            }
        }
    }

    /// Non-negative instant cost `r_upper - r(s)`.
    pub fn cost(&self, s: &State) -> f64 {
        (self.kind().reward_upper_bound() - self.reward_unchecked(s)).max(0.0)
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let values: Vec<f64> = self
            .initial
            .center
            .iter()
            .zip(&self.initial.half_width)
            .map(|(&c, &w)| if w > 0.0 { c + rng.random_range(-w..w) } else { c })
            .collect();
        State::new(&values)
    }

    /// Total mechanical energy of the pendulum, zero when hanging at rest.
    pub fn pendulum_energy(&self, s: &State) -> Option<f64> {
        match &self.dynamics {
            Dynamics::Pendulum(p) => {
                let inertia = p.mass * p.length * p.length;
                Some(0.5 * inertia * s[1] * s[1] + p.mass * p.gravity * p.length * (1.0 + s[0].cos()))
            }
            _ => None,
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn pendulum_hanging_is_equilibrium() {
        let p = Plant::pendulum();
        let s = p.step(&State::new(&[PI, 0.0]), 0.0).unwrap();
        assert!((s[0] - PI).abs() < 1e-12 && s[1].abs() < 1e-12, "{s:?}");
    }

    #[test]
    fn cartpole_upright_is_fixed_point() {
        let p = Plant::cartpole();
        let s = p.step(&State::zeros(4), 0.0).unwrap();
        assert_eq!(s.as_slice(), &[0.0; 4]);
    }

    #[test]
    fn acrobot_hanging_is_fixed_point() {
        let p = Plant::acrobot();
        let s = p.step(&State::zeros(4), 0.0).unwrap();
        assert!(s.as_slice().iter().all(|v| v.abs() < 1e-12), "{s:?}");
    }

    #[test]
    fn rk4_matches_fine_euler() {
        let p = Plant::pendulum();
        let s0 = State::new(&[PI / 2.0, 0.0]);
        let rk = p.step(&s0, 0.0).unwrap();
        let sub = 1000;
        let h = p.dt / sub as f64;
        let (mut th, mut om) = (PI / 2.0, 0.0f64);
        for _ in 0..sub {
            let acc = 9.81 / 0.5 * th.sin();
            th += h * om;
            om += h * acc;
        }
        assert!((rk[0] - th).abs() < 1e-4, "{} vs {}", rk[0], th);
        assert!((rk[1] - om).abs() < 1e-4, "{} vs {}", rk[1], om);
    }

    #[test]
    fn table_rewards() {
        assert_eq!(Plant::acrobot().reward(&State::zeros(4), 0.0).unwrap(), 0.0);
        assert_eq!(Plant::cartpole().reward(&State::zeros(4), 0.0).unwrap(), 0.0);
        assert_eq!(Plant::pendulum().reward(&State::zeros(2), 0.0).unwrap(), 4000.0);
    }

    #[test]
    fn rewards_match_closed_forms_on_random_states() {
        let mut rng = seed::stream(3, &[]);
        for _ in 0..100 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-4.0..4.0)).collect();
            let s4 = State::new(&v);
            let s2 = State::new(&v[..2]);
            let acro = v[0].cos() - (v[0] + v[1]).cos();
            let cart = -(v[0].powi(2) + 500.0 * v[2].sin().powi(2) + v[1].powi(2) + v[3].powi(2));
            let pend = -(50.0 * (v[0].cos() - 1.0).powi(2) + v[1].powi(2)) + 4000.0;
            assert!((Plant::acrobot().reward(&s4, 0.0).unwrap() - acro).abs() < 1e-12);
            assert!((Plant::cartpole().reward(&s4, 0.0).unwrap() - cart).abs() < 1e-12);
            assert!((Plant::pendulum().reward(&s2, 0.0).unwrap() - pend).abs() < 1e-12);
        }
    }

    #[test]
    fn costs_are_non_negative_at_the_reward_bound() {
        for kind in PlantKind::ALL {
            let p = Plant::from_kind(kind);
            let mut rng = seed::stream(5, &[kind as u64]);
            for _ in 0..200 {
                let v: Vec<f64> = (0..p.state_dim()).map(|_| rng.random_range(-5.0..5.0)).collect();
                assert!(p.cost(&State::new(&v)) >= 0.0);
            }
        }
        let acro = Plant::acrobot();
        assert_eq!(acro.cost(&State::new(&[0.0, PI, 0.0, 0.0])), 0.0);
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let p = Plant::pendulum();
        assert_eq!(
            p.step(&State::zeros(4), 0.0),
            Err(EnvError::DimensionMismatch { expected: 2, got: 4 })
        );
        assert!(matches!(p.step(&State::new(&[f64::NAN, 0.0]), 0.0), Err(EnvError::NonFinite(_))));
        assert!(matches!(p.reward(&State::new(&[f64::INFINITY, 0.0]), 0.0), Err(EnvError::NonFinite(_))));
    }

    #[test]
    fn clamping_is_applied_before_integration() {
        for kind in PlantKind::ALL {
            let p = Plant::from_kind(kind);
            let s = p.sample_initial_state(&mut seed::stream(1, &[]));
            let big = p.action_high * 7.5;
            assert_eq!(p.step(&s, big).unwrap(), p.step(&s, p.action_high).unwrap());
            assert_eq!(p.step(&s, -big).unwrap(), p.step(&s, p.action_low).unwrap());
        }
    }

    #[test]
    fn pendulum_energy_is_conserved() {
        let p = Plant::pendulum();
        let mut s = State::new(&[PI / 2.0, 0.3]);
        let e0 = p.pendulum_energy(&s).unwrap();
        for _ in 0..1000 {
            s = p.step(&s, 0.0).unwrap();
        }
        let e1 = p.pendulum_energy(&s).unwrap();
        assert!(((e1 - e0) / e0).abs() < 0.01, "{e0} -> {e1}");
    }

    #[test]
    fn initial_state_sampling() {
        let p = Plant::pendulum();
        let a = p.sample_initial_state(&mut seed::stream(9, &[]));
        let b = p.sample_initial_state(&mut seed::stream(9, &[]));
        assert_eq!(a, b);
        assert!((a[0] - PI).abs() <= 0.1 && a[1] == 0.0);

        let mut rng = seed::stream(10, &[]);
        let n = 10_000;
        let mean = (0..n).map(|_| p.sample_initial_state(&mut rng)[0]).sum::<f64>() / n as f64;
        // Uniform(-0.1, 0.1) has standard deviation 0.2 / sqrt(12).
        let se = 0.2 / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - PI).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((wrap_angle(2.0 * PI + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("acrobot".parse::<PlantKind>().unwrap(), PlantKind::Acrobot);
        assert!("cheetah".parse::<PlantKind>().is_err());
        for k in PlantKind::ALL {
            Plant::from_kind(k).validate().unwrap();
        }
    }
}
