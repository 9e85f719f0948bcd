//! `hetbo` command-line harness. Every subcommand writes CSV artifacts into
//! the output directory and prints a one-line JSON summary on stdout. Errors
//! go to stderr as JSON with a category-specific exit code.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hetbo::bayesopt::{run_bo, run_pilot, write_trace_csv, BoConfig, NoiseMode, Objective, SearchBox};
use hetbo::cmaes::run_cmaes;
use hetbo::env::PlantKind;
use hetbo::harness::{
    decile_spread_ratio, export_comparison, export_noise_plot, export_sweep, run_comparison, run_grid_sweep,
    ExperimentConfig, HarnessError, Method, SweepAxis,
};
use hetbo::mppi::{run_episode, MppiConfig};
use hetbo::noise_model::{fit_noise, fit_trend, NoiseFitOptions};
use hetbo::seed;
use hetbo::synthetic::{cubic_noise_samples, IncreasingVariance};

#[derive(Parser)]
#[command(name = "hetbo", version, about = "MPPI hyper-parameter tuning with heteroscedastic Bayesian optimisation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Without it the task preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "pendulum")]
    task: PlantKind,
    /// Master seed; replaces the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Episodes per observation.
    #[arg(long)]
    repeats: Option<usize>,
    /// MPPI rollouts per step.
    #[arg(long)]
    rollouts: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::preset(self.task),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(r) = self.repeats {
            cfg.bo.repeats = r;
        }
        if let Some(m) = self.rollouts {
            cfg.rollouts = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Homo,
    Hetero,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseSource {
    /// Increasing-variance fixture on [0, 1.2].
    IncreasingVariance,
    /// Cubic trend with cubic log-noise on [0, 1].
    Cubic,
    /// Sobol pilot of the configured task.
    Task,
}

#[derive(Subcommand)]
enum Command {
    /// Grid sweep of one hyper-parameter with the other at the task optimum.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "lambda")]
        axis: SweepAxis,
        #[arg(long, default_value_t = 15)]
        grid: usize,
    },
    /// Paired comparison of optimisers over the config's seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "bo_hetero,bo_homo,cmaes")]
        methods: Vec<Method>,
        /// Seed list; replaces the config's seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Fits trend and noise model and exports the band plot.
    FitNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "increasing-variance")]
        source: NoiseSource,
        #[arg(long, default_value_t = 10)]
        degree: usize,
        /// Sample count for the synthetic sources.
        #[arg(long, default_value_t = IncreasingVariance::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 101)]
        grid: usize,
    },
    /// One BO run: pilot, start point and UCB iterations.
    Bo {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "hetero")]
        mode: Mode,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// One CMA-ES run with the same start point and budget as BO.
    Cmaes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Single MPPI episode trace.
    Episode {
        #[command(flatten)]
        common: Common,
        /// Temperature; defaults to the task optimum.
        #[arg(long)]
        lambda: Option<f64>,
        /// Control noise std; defaults to the task optimum.
        #[arg(long)]
        sigma_eps: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.to_path_buf(), source }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn run(cli: Cli) -> Result<serde_json::Value, HarnessError> {
    match cli.command {
        Command::Sweep { common, axis, grid } => {
            let cfg = common.load()?;
            let obj = cfg.objective();
            let seed = cfg.seeds[0];
            let points = run_grid_sweep(&obj, axis.index(), &cfg.optimum, grid, cfg.bo.repeats, seed)?;
            export_sweep(&cfg.output_dir, &points, &obj.param_names(), axis.index())?;
            let failed = points.iter().filter(|p| p.error.is_some()).count();
            Ok(json!({
                "command": "sweep",
                "axis": axis.name(),
                "points": points.len(),
                "failed": failed,
                "decile_spread_ratio": decile_spread_ratio(&points, axis.index()),
            }))
        }
        Command::Compare { common, methods, seeds, iterations } => {
            let mut cfg = common.load()?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(n) = iterations {
                cfg.bo.iterations = n;
            }
            let obj = cfg.objective();
            let cmp = run_comparison(&obj, &cfg.bo, &cfg.cmaes, &methods, &cfg.seeds)?;
            export_comparison(&cfg.output_dir, &cmp)?;
            for f in &cmp.failures {
                eprintln!("{}", json!({"notice": "run excluded", "method": cmp.labels[f.slot], "seed": f.seed, "error": f.error}));
            }
            let last: Vec<_> = cmp
                .labels
                .iter()
                .filter_map(|l| cmp.summary.iter().filter(|r| &r.label == l).last())
                .map(|r| json!({"method": r.label, "n": r.n, "mean": r.mean, "std": r.std}))
                .collect();
            Ok(json!({"command": "compare", "runs": cmp.runs.len(), "failures": cmp.failures.len(), "final": last}))
        }
        Command::FitNoise { common, source, degree, samples, grid } => {
            let cfg = common.load()?;
            let seed = cfg.seeds[0];
            let (data, box_) = match source {
                NoiseSource::IncreasingVariance => (
                    IncreasingVariance::samples(samples, &mut seed::stream(seed, &[])),
                    SearchBox::new(vec![IncreasingVariance::LOWER], vec![IncreasingVariance::UPPER])?,
                ),
                NoiseSource::Cubic => {
                    (cubic_noise_samples(samples, &mut seed::stream(seed, &[])), SearchBox::new(vec![0.0], vec![1.0])?)
                }
                NoiseSource::Task => {
                    let obj = cfg.objective();
                    (run_pilot(&obj, &cfg.bo, seed)?.samples(), obj.search_box())
                }
            };
            let map = box_.polynomial_map(degree);
            let trend = fit_trend(&data, &map)?;
            let noise = fit_noise(&data, &trend, &map, &NoiseFitOptions::default())?;
            let names: Vec<String> = if box_.dim() == 1 { vec!["x".into()] } else { vec!["lambda".into(), "sigma_eps".into()] };
            let mut axes = vec![];
            for (axis, name) in names.iter().enumerate() {
                let dir = if box_.dim() == 1 { cfg.output_dir.clone() } else { cfg.output_dir.join(name) };
                export_noise_plot(&dir, &noise, &trend, &data, &box_, axis, grid, name)?;
                axes.push(name.clone());
            }
            let model = serde_json::to_string_pretty(&noise).expect("noise model serialises");
            write(&cfg.output_dir.join("noise_model.json"), model.as_bytes())?;
            Ok(json!({"command": "fit-noise", "samples": data.len(), "degree": degree, "z": noise.z, "zeta": noise.zeta, "axes": axes}))
        }
        Command::Bo { common, mode, iterations } => {
            let mut cfg = common.load()?;
            if let Some(n) = iterations {
                cfg.bo.iterations = n;
            }
            let obj = cfg.objective();
            let seed = cfg.seeds[0];
            let pilot = run_pilot(&obj, &cfg.bo, seed)?;
            let noise = match mode {
                Mode::Homo => None,
                Mode::Hetero => Some(pilot.fit_noise_model(&obj.search_box(), cfg.bo.noise_degree, &NoiseFitOptions::default())?.1),
            };
            let bo = BoConfig {
                mode: match mode {
                    Mode::Homo => NoiseMode::Homoscedastic,
                    Mode::Hetero => NoiseMode::Heteroscedastic,
                },
                ..cfg.bo.clone()
            };
            let result = run_bo(&obj, &bo, &pilot, noise.as_ref(), seed).map_err(|f| HarnessError::Bo(f.error))?;
            let mut buf = vec![];
            write_trace_csv(&pilot.records, &obj.param_names(), &mut buf)?;
            write(&cfg.output_dir.join("pilot.csv"), &buf)?;
            let mut buf = vec![];
            write_trace_csv(result.records(), &obj.param_names(), &mut buf)?;
            write(&cfg.output_dir.join("trace.csv"), &buf)?;
            let state = serde_json::to_string_pretty(&result.state).expect("state serialises");
            write(&cfg.output_dir.join("state.json"), state.as_bytes())?;
            write(&cfg.output_dir.join("timings.json"), json!(result.timings).to_string().as_bytes())?;
            Ok(json!({
                "command": "bo",
                "incumbent": result.incumbent,
                "incumbent_mean": result.incumbent_mean,
                "best_observed": result.best_observed().last(),
            }))
        }
        Command::Cmaes { common, iterations } => {
            let mut cfg = common.load()?;
            if let Some(n) = iterations {
                cfg.bo.iterations = n;
            }
            let obj = cfg.objective();
            let seed = cfg.seeds[0];
            let pilot = run_pilot(&obj, &cfg.bo, seed)?;
            let result = run_cmaes(&obj, &cfg.cmaes, cfg.bo.iterations, cfg.bo.repeats, &pilot.scaler, seed)?;
            let mut buf = vec![];
            write_trace_csv(&result.records, &obj.param_names(), &mut buf)?;
            write(&cfg.output_dir.join("trace.csv"), &buf)?;
            let best = result.records.iter().map(|r| r.y).fold(f64::NEG_INFINITY, f64::max);
            Ok(json!({"command": "cmaes", "mean": result.mean, "best_observed": best, "resets": result.resets}))
        }
        Command::Episode { common, lambda, sigma_eps, steps } => {
            let cfg = common.load()?;
            let mppi = MppiConfig::new(
                lambda.unwrap_or(cfg.optimum[0]),
                sigma_eps.unwrap_or(cfg.optimum[1]),
                cfg.horizon,
                cfg.rollouts,
            );
            let ep = run_episode(&cfg.plant, &mppi, steps.unwrap_or(cfg.episode_len), &mut seed::stream(cfg.seeds[0], &[]))?;
            let mut buf = vec![];
            hetbo::mppi::write_trace_csv(&ep, &mut buf)?;
            write(&cfg.output_dir.join("episode.csv"), &buf)?;
            Ok(json!({"command": "episode", "return": ep.ret, "truncated": ep.truncated, "steps": ep.trace.len()}))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": {"category": e.category(), "message": e.to_string()}}));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
