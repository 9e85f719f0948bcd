//! Tuning stochastic model predictive controllers with heteroscedastic
//! Bayesian optimisation.
//!
//! The crate contains the simulated plants ([`env`]), an MPPI controller
//! ([`mppi`]), exact Gaussian-process regression ([`gp`]), the parametric
//! input-dependent noise model ([`noise_model`]), the optimisation loop
//! ([`bayesopt`]), a CMA-ES baseline ([`cmaes`]) and the experiment
//! orchestration behind the command-line tool ([`harness`]).

pub mod bayesopt;
pub mod cmaes;
pub mod env;
pub mod gp;
pub mod harness;
pub mod mppi;
pub mod noise_model;
pub mod optim;
mod plot;
pub mod seed;
pub mod synthetic;
