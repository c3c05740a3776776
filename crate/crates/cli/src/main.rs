//! `khjb`: generate data, fit operators, solve for a feedback law, forecast
//! observables and run benchmarks.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use faer::Mat;
use kernel_hjb::bench::{self, convergence_sweep, loglog_slope, run_benchmark, BenchReport};
use kernel_hjb::config::{parse_observable, PredictPolicy, RunConfig, KEYS};
use kernel_hjb::estimator::{enforce_markov, fit_krr_with, model_select, ModelScore};
use kernel_hjb::fpk::{embed_initial_in, psi_on_basis, trajectory, PropagationPolicy};
use kernel_hjb::hjb::{khjb_recursion, PolicyInterpolator};
use kernel_hjb::store;
use kernel_hjb::systems::{self, DatasetSpec};
use kernel_hjb::{Error, EstimatedOperators, Result};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "khjb", version, about = "Kernel HJB optimal control from data")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a dataset from a built-in system and write it as CSV.
    Generate {
        #[arg(long)]
        system: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        /// Output CSV (default <out>/dataset.csv).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Fit the transition operators from a dataset CSV.
    Identify {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Comma-separated sigma candidates for model selection.
        #[arg(long, value_delimiter = ',')]
        sigma_grid: Option<Vec<f64>>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Enforce the Markov column-sum constraints.
        #[arg(long)]
        markov: bool,
        /// Output model (default <out>/model.khjb).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the value recursion and export value and policy tables.
    Control {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        stop_tol: Option<f64>,
        #[arg(long)]
        query_grid: Option<PathBuf>,
    },
    /// Propagate an initial measure and forecast an observable.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        /// zero | training | learned
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Comma-separated point-mass initial state.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        observable: Option<String>,
        #[arg(long)]
        dump_weights: bool,
    },
    /// Repeated train/evaluate runs of a built-in system.
    Bench {
        #[arg(long)]
        system: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Benchmark over increasing sample counts.
    Sweep {
        #[arg(long)]
        system: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
    },
}

fn key_table() -> String {
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Configuration keys (TOML, dotted; default in brackets):\n");
    for (key, default, doc) in KEYS {
        s.push_str(&format!("  {key:<width$}  {doc} [{default}]\n"));
    }
    s
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = Cli::command().after_long_help(key_table()).after_help(key_table()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            require_file(p, "config")?;
            RunConfig::from_file(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        // Fails only if a pool exists already, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    std::fs::create_dir_all(&cfg.out).map_err(|source| Error::Io { path: cfg.out.clone(), source })?;

    match cli.command {
        Command::Generate { system, n, dataset } => {
            if let Some(s) = system {
                cfg.system = s;
            }
            if n.is_some() {
                cfg.data.n = n;
            }
            if dataset.is_some() {
                cfg.dataset = dataset;
            }
            generate(&cfg)
        }
        Command::Identify { dataset, sigma, sigma_grid, gamma, markov, model } => {
            if dataset.is_some() {
                cfg.dataset = dataset;
            }
            if sigma.is_some() {
                cfg.kernel.sigma = sigma;
            }
            if let Some(g) = sigma_grid {
                cfg.estimator.sigma_grid = g;
            }
            if gamma.is_some() {
                cfg.kernel.gamma = gamma;
            }
            cfg.estimator.markov_enforce |= markov;
            if model.is_some() {
                cfg.model = model;
            }
            identify(&cfg)
        }
        Command::Control { model, horizon, stop_tol, query_grid } => {
            if model.is_some() {
                cfg.model = model;
            }
            if horizon.is_some() {
                cfg.hjb.horizon = horizon;
            }
            if stop_tol.is_some() {
                cfg.hjb.stop_tol = stop_tol;
            }
            if query_grid.is_some() {
                cfg.hjb.query_grid = query_grid;
            }
            control(&cfg)
        }
        Command::Predict { model, policy, steps, x0, observable, dump_weights } => {
            if model.is_some() {
                cfg.model = model;
            }
            if let Some(p) = policy {
                cfg.predict.policy = match p.as_str() {
                    "zero" => PredictPolicy::Zero,
                    "training" => PredictPolicy::Training,
                    "learned" => PredictPolicy::Learned,
                    other => return Err(Error::Config(format!("unknown policy `{other}`"))),
                };
            }
            if let Some(s) = steps {
                cfg.predict.steps = s;
            }
            if x0.is_some() {
                cfg.predict.x0 = x0;
            }
            if let Some(o) = observable {
                cfg.predict.observable = o;
            }
            cfg.predict.dump_weights |= dump_weights;
            predict(&cfg)
        }
        Command::Bench { system, reps, n } => {
            if let Some(s) = system {
                cfg.system = s;
            }
            if let Some(r) = reps {
                cfg.bench.reps = r;
            }
            if n.is_some() {
                cfg.data.n = n;
            }
            bench_cmd(&cfg)
        }
        Command::Sweep { system, reps, n_grid } => {
            if let Some(s) = system {
                cfg.system = s;
            }
            if let Some(r) = reps {
                cfg.bench.reps = r;
            }
            if let Some(g) = n_grid {
                cfg.bench.n_grid = g;
            }
            sweep(&cfg)
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Input(format!("{what} file {} not found", path.display())))
    }
}

fn dataset_path(cfg: &RunConfig) -> PathBuf {
    cfg.dataset.clone().unwrap_or_else(|| cfg.out.join("dataset.csv"))
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.model.clone().unwrap_or_else(|| cfg.out.join("model.khjb"))
}

fn load_model(cfg: &RunConfig) -> Result<EstimatedOperators> {
    let path = model_path(cfg);
    require_file(&path, "model")?;
    store::load(&path)
}

fn generate(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.bench_spec()?;
    let system = systems::registry(&cfg.system)?;
    let data = systems::generate_dataset(&system, &DatasetSpec { seed: cfg.seed, ..spec.data })?;
    let path = dataset_path(cfg);
    store::write_dataset_csv(&data, &path)?;
    log::info!("wrote {} samples to {}", data.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct IdentifySummary {
    system: String,
    n: usize,
    sigma: f64,
    gamma: f64,
    orientation: String,
    markov_enforced: bool,
    residual_norm: f64,
    departure_from_normality: f64,
    chosen_sigma: Option<f64>,
    scores: Vec<ModelScore>,
}

fn identify(cfg: &RunConfig) -> Result<()> {
    let path = dataset_path(cfg);
    require_file(&path, "dataset")?;
    let data = store::read_dataset_csv(&path)?;
    let mut run = cfg.clone();
    run.system = data.system.clone();
    let mut spec = run.bench_spec()?;
    spec.kernel.dt = data.dt;
    spec.kernel.epsilon = data.epsilon;

    let (chosen, scores) = if run.estimator.sigma_grid.is_empty() {
        (None, Vec::new())
    } else {
        let (best, scores) = model_select(
            &data,
            &spec.kernel,
            &run.estimator.sigma_grid,
            run.selection_weights(),
            run.estimator.val_fraction,
        )?;
        spec.kernel.sigma = best;
        (Some(best), scores)
    };
    let mut ops = fit_krr_with(&data, &spec.kernel, spec.orientation)?;
    if run.estimator.markov_enforce {
        ops = enforce_markov(&ops);
    }
    let summary = IdentifySummary {
        system: data.system.clone(),
        n: data.len(),
        sigma: ops.kernel.sigma,
        gamma: ops.kernel.gamma,
        orientation: format!("{:?}", ops.orientation).to_lowercase(),
        markov_enforced: ops.markov_enforced,
        residual_norm: ops.residual_norm()?,
        departure_from_normality: kernel_hjb::estimator::departure_from_normality(&ops.a_hat)?,
        chosen_sigma: chosen,
        scores,
    };
    let out = model_path(cfg);
    store::save(&ops, &out)?;
    store::write_json(&summary, cfg.out.join("identify.json"))?;
    log::info!("wrote model to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct ControlSummary {
    horizon: usize,
    dt: f64,
    converged_at: Option<usize>,
    stationary_gain: Option<f64>,
}

fn control(cfg: &RunConfig) -> Result<()> {
    let ops = load_model(cfg)?;
    let mut run = cfg.clone();
    run.system = ops.dataset.system.clone();
    let spec = run.bench_spec()?;
    let penalty = run.penalty()?;
    let sol = khjb_recursion(&ops, &ops.dataset.stage_cost(), &penalty, spec.horizon, spec.stop_tol)?;
    store::write_value_csv(&sol, &ops.dataset, run.hjb.export_stride, cfg.out.join("value.csv"))?;
    store::save(&sol, cfg.out.join("value.khjb"))?;

    if let Some(grid) = &run.hjb.query_grid {
        require_file(grid, "query grid")?;
        let (_, rows) = store::read_numeric_csv(grid)?;
        let n_x = ops.dataset.n_x();
        if rows.iter().any(|r| r.len() < n_x) {
            return Err(Error::Input(format!("query grid rows need {n_x} state columns")));
        }
        let points: Vec<Vec<f64>> = rows.into_iter().map(|r| r[..n_x].to_vec()).collect();
        let interp = PolicyInterpolator::new(&ops, &sol)?;
        let controls = points.iter().map(|p| interp.stationary(p)).collect::<Result<Vec<_>>>()?;
        store::write_policy_grid_csv(&points, &controls, cfg.out.join("policy_grid.csv"))?;
    }
    let summary = ControlSummary {
        horizon: sol.horizon,
        dt: sol.dt,
        converged_at: sol.converged_at,
        stationary_gain: bench::least_squares_gain(&ops.dataset, &sol).ok(),
    };
    store::write_json(&summary, cfg.out.join("control.json"))
}

fn initial_samples(cfg: &RunConfig, ops: &EstimatedOperators) -> Result<Mat<f64>> {
    let n_x = ops.dataset.n_x();
    if let Some(path) = &cfg.predict.initial {
        require_file(path, "initial sample")?;
        let (_, rows) = store::read_numeric_csv(path)?;
        if rows.is_empty() || rows.iter().any(|r| r.len() < n_x) {
            return Err(Error::Input(format!("initial samples need {n_x} state columns")));
        }
        return Ok(Mat::from_fn(n_x, rows.len(), |d, j| rows[j][d]));
    }
    let x0 = match &cfg.predict.x0 {
        Some(x) => x.clone(),
        None => {
            let domain = &systems::registry(&ops.dataset.system)?.domain;
            domain.lo.iter().zip(&domain.hi).map(|(a, b)| 0.5 * (a + b)).collect()
        }
    };
    if x0.len() != n_x {
        return Err(Error::Input(format!("x0 has {} entries, the model has n_x = {n_x}", x0.len())));
    }
    Ok(Mat::from_fn(n_x, 1, |d, _| x0[d]))
}

fn predict(cfg: &RunConfig) -> Result<()> {
    let ops = load_model(cfg)?;
    let psi = parse_observable(&cfg.predict.observable, ops.dataset.n_x())?;
    let x0 = initial_samples(cfg, &ops)?;
    let basis = cfg.predict.embed_basis;
    let mut z0 = embed_initial_in(&ops, x0.as_ref(), basis)?;
    if ops.markov_enforced {
        // Mass is conserved only in this case; start from a probability vector.
        let mass = z0.mass();
        if mass.abs() < 1e-12 {
            return Err(Error::Input("initial state lies outside the support of the data".into()));
        }
        z0.z.iter_mut().for_each(|v| *v /= mass);
    }
    let policy = match cfg.predict.policy {
        PredictPolicy::Zero => PropagationPolicy::Zero,
        PredictPolicy::Training => PropagationPolicy::Training,
        PredictPolicy::Learned => {
            let mut run = cfg.clone();
            run.system = ops.dataset.system.clone();
            let spec = run.bench_spec()?;
            let sol = khjb_recursion(&ops, &ops.dataset.stage_cost(), &run.penalty()?, spec.horizon, spec.stop_tol)?;
            PropagationPolicy::Table(sol.policy_matrix(sol.stationary_step()))
        }
    };
    let traj = trajectory(&ops, &z0, &policy, cfg.predict.steps)?;
    let values = psi_on_basis(&ops, basis, |x| psi(x));
    let forecast = traj
        .iter()
        .map(|z| kernel_hjb::fpk::observable_forecast(z, &values))
        .collect::<Result<Vec<_>>>()?;
    store::write_forecast_csv(&forecast, ops.dataset.dt, cfg.out.join("forecast.csv"))?;
    if cfg.predict.dump_weights {
        store::write_weights_csv(&traj, cfg.out.join("weights.csv"))?;
    }
    Ok(())
}

fn bench_cmd(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.bench_spec()?;
    let report = run_benchmark(&spec, cfg.bench.reps, cfg.seed)?;
    println!(
        "{}: rmse {:.4e} ± {:.2e} over {} reps ({} flagged)",
        report.system,
        report.rmse_mean,
        report.rmse_std,
        report.reps,
        report.n_flagged()
    );
    store::write_report_csv(std::slice::from_ref(&report), cfg.out.join("bench_report.csv"))?;
    store::save(&report, cfg.out.join("bench_report.khjb"))?;
    store::write_json(&report, cfg.out.join("bench_summary.json"))
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    loglog_slope: Option<f64>,
    reports: &'a [BenchReport],
}

fn sweep(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.bench_spec()?;
    let reports = convergence_sweep(&spec, &cfg.bench.n_grid, cfg.bench.reps, cfg.seed)?;
    let points: Vec<(f64, f64)> = reports.iter().map(|r| (r.n as f64, r.rmse_mean)).collect();
    let slope = loglog_slope(&points).ok();
    for r in &reports {
        println!("N = {:>6}: rmse {:.4e} ± {:.2e}", r.n, r.rmse_mean, r.rmse_std);
    }
    if let Some(s) = slope {
        println!("log-log slope {s:.3}");
    }
    store::write_report_csv(&reports, cfg.out.join("sweep_report.csv"))?;
    store::write_json(&SweepSummary { loglog_slope: slope, reports: &reports }, cfg.out.join("sweep_summary.json"))
}
