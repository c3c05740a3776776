//! Benchmark harness: repeated identification runs scored by policy RMSE,
//! closed-loop rollouts, a scalar Riccati reference and sample-size sweeps.

use std::time::Instant;

use faer::{Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::estimator::{enforce_markov, fit_krr_with, BlockOrientation};
use crate::hjb::{khjb_recursion, PolicyInterpolator, ValueSolution};
use crate::kernel::KernelConfig;
use crate::systems::{self, euler_maruyama_step, ControlAffineSystem, Dataset, DatasetSpec};

/// Root mean squared Euclidean error between two feedback laws over the
/// columns of `test_points`.
pub fn rmse_policy(
    estimated: impl Fn(&[f64]) -> Result<Vec<f64>>,
    truth: impl Fn(&[f64]) -> Vec<f64>,
    test_points: MatRef<'_, f64>,
) -> Result<f64> {
    ensure(test_points.ncols() >= 1, || "no test points".into())?;
    let mut total = 0.0;
    for j in 0..test_points.ncols() {
        let x = crate::linalg::column(test_points, j);
        let e = estimated(&x)?;
        let t = truth(&x);
        ensure(e.len() == t.len(), || "policy dimensions differ".into())?;
        total += e.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok((total / test_points.ncols() as f64).sqrt())
}

/// Inclusive lattice with `per_axis` points on each side of `domain`.
pub fn test_grid(domain: &systems::BoxDomain, per_axis: usize) -> Mat<f64> {
    let dim = domain.dim();
    let total = per_axis.pow(dim as u32);
    Mat::from_fn(dim, total, |d, j| {
        let mut flat = j;
        let mut idx = 0;
        for k in (0..dim).rev() {
            let here = flat % per_axis;
            flat /= per_axis;
            if k == d {
                idx = here;
            }
        }
        if per_axis == 1 {
            0.5 * (domain.lo[d] + domain.hi[d])
        } else {
            domain.lo[d] + (domain.hi[d] - domain.lo[d]) * idx as f64 / (per_axis - 1) as f64
        }
    })
}

/// Everything needed to run one benchmark repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub system: String,
    pub data: DatasetSpec,
    pub kernel: KernelConfig,
    pub horizon: usize,
    pub stop_tol: f64,
    pub markov: bool,
    pub orientation: BlockOrientation,
    /// Test points per axis.
    pub test_per_axis: usize,
}

impl BenchmarkSpec {
    /// Reference settings of a built-in system.
    pub fn defaults(name: &str) -> Result<Self> {
        let sys = systems::registry(name)?;
        let data = DatasetSpec::for_system(&sys);
        let (sigma, horizon, gamma, stop_tol, test_per_axis) = match sys.name.as_str() {
            "s1" => (1.2, 500, 1e-8, 0.0, 100),
            "s2" => (1.8, 5000, 1e-8, 0.0, 100),
            "s3" => (2.0, 5000, 1e-8, 0.0, 100),
            "s4" => (1.0, 500, 1e-8, 0.0, 100),
            _ => (20.0, 3000, 1e-4, 1e-6, 30),
        };
        Ok(Self {
            system: sys.name.clone(),
            kernel: KernelConfig {
                sigma,
                epsilon: data.epsilon,
                dt: data.dt,
                gamma,
                ..KernelConfig::default()
            },
            data,
            horizon,
            stop_tol,
            markov: false,
            orientation: BlockOrientation::Row,
            test_per_axis,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        ensure(self.horizon >= 1, || "horizon must be >= 1".into())?;
        ensure(self.test_per_axis >= 1, || "test grid must have points".into())?;
        if self.kernel.dt != self.data.dt || self.kernel.epsilon != self.data.epsilon {
            return Err(Error::Config(
                "kernel dt/epsilon must match the dataset dt/epsilon".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one fitted-and-solved repetition.
pub struct Trained {
    pub system: ControlAffineSystem,
    pub dataset: Dataset,
    pub ops: crate::estimator::EstimatedOperators,
    pub solution: ValueSolution,
}

impl Trained {
    pub fn interpolator(&self) -> Result<PolicyInterpolator<'_>> {
        PolicyInterpolator::new(&self.ops, &self.solution)
    }

    /// RMSE of the stationary law against the system's ground truth on the
    /// spec's test grid.
    pub fn rmse(&self, per_axis: usize) -> Result<f64> {
        let truth = self
            .system
            .ground_truth_policy
            .clone()
            .ok_or_else(|| Error::Config(format!("system {} has no ground truth", self.system.name)))?;
        let interp = self.interpolator()?;
        let grid = test_grid(&self.system.domain, per_axis);
        rmse_policy(|x| interp.stationary(x), |x| truth(x), grid.as_ref())
    }
}

/// Generates data, fits, and runs the recursion for one repetition.
pub fn train(spec: &BenchmarkSpec, seed: u64) -> Result<Trained> {
    spec.validate()?;
    let system = systems::registry(&spec.system)?;
    let dataset = systems::generate_dataset(&system, &DatasetSpec { seed, ..spec.data.clone() })?;
    let mut ops = fit_krr_with(&dataset, &spec.kernel, spec.orientation)?;
    if spec.markov {
        ops = enforce_markov(&ops);
    }
    let solution = khjb_recursion(
        &ops,
        &dataset.stage_cost(),
        &system.penalty,
        spec.horizon,
        spec.stop_tol,
    )?;
    Ok(Trained {
        system,
        dataset,
        ops,
        solution,
    })
}

/// SplitMix64 finalizer, used to derive per-repetition seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rep_seed(seed: u64, rep: usize) -> u64 {
    splitmix64(seed ^ splitmix64(rep as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub system: String,
    pub reps: usize,
    /// Mean over non-flagged repetitions (`NaN` if all were flagged).
    pub rmse_mean: f64,
    /// Sample standard deviation over non-flagged repetitions; 0 with fewer
    /// than two.
    pub rmse_std: f64,
    /// `NaN` for flagged repetitions.
    pub per_rep_rmse: Vec<f64>,
    pub flagged: Vec<bool>,
    /// Step at which the stopping rule fired, per repetition.
    pub converged_at: Vec<Option<usize>>,
    pub sigma: f64,
    pub n: usize,
    pub horizon: usize,
    pub dt: f64,
    pub wall_time_s: f64,
    pub seed: u64,
}

impl BenchReport {
    pub fn successful(&self) -> usize {
        self.flagged.iter().filter(|f| !**f).count()
    }

    pub fn n_flagged(&self) -> usize {
        self.reps - self.successful()
    }

    /// Equality ignoring the wall-clock field; `NaN` entries compare equal.
    pub fn same_results(&self, other: &BenchReport) -> bool {
        let eq = |a: f64, b: f64| a.to_bits() == b.to_bits();
        self.system == other.system
            && self.reps == other.reps
            && eq(self.rmse_mean, other.rmse_mean)
            && eq(self.rmse_std, other.rmse_std)
            && self.per_rep_rmse.len() == other.per_rep_rmse.len()
            && self.per_rep_rmse.iter().zip(&other.per_rep_rmse).all(|(a, b)| eq(*a, *b))
            && self.flagged == other.flagged
            && self.converged_at == other.converged_at
            && eq(self.sigma, other.sigma)
            && self.n == other.n
            && self.horizon == other.horizon
            && eq(self.dt, other.dt)
            && self.seed == other.seed
    }
}

/// Mean and sample standard deviation in index order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `reps` independent repetitions. Repetitions that fail (divergent
/// recursion, failed factorization) are flagged and excluded from the mean.
pub fn run_benchmark(spec: &BenchmarkSpec, reps: usize, seed: u64) -> Result<BenchReport> {
    ensure(reps >= 1, || "reps must be >= 1".into())?;
    spec.validate()?;
    systems::registry(&spec.system)?;
    let start = Instant::now();
    let outcomes: Vec<Result<(f64, Option<usize>, usize)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let trained = train(spec, rep_seed(seed, r))?;
            let rmse = trained.rmse(spec.test_per_axis)?;
            Ok((rmse, trained.solution.converged_at, trained.dataset.len()))
        })
        .collect();
    let mut per_rep = Vec::with_capacity(reps);
    let mut flagged = Vec::with_capacity(reps);
    let mut converged = Vec::with_capacity(reps);
    let mut n = spec.data.n;
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((rmse, c, len)) if rmse.is_finite() => {
                per_rep.push(rmse);
                flagged.push(false);
                converged.push(c);
                n = len;
            }
            Ok(_) => {
                log::warn!("{} rep {r}: non-finite RMSE, flagged", spec.system);
                per_rep.push(f64::NAN);
                flagged.push(true);
                converged.push(None);
            }
            Err(e) => {
                if e.is_usage() {
                    return Err(e);
                }
                log::warn!("{} rep {r} flagged: {e}", spec.system);
                per_rep.push(f64::NAN);
                flagged.push(true);
                converged.push(None);
            }
        }
    }
    let ok: Vec<f64> = per_rep.iter().copied().filter(|v| v.is_finite()).collect();
    let (rmse_mean, rmse_std) = mean_std(&ok);
    Ok(BenchReport {
        system: spec.system.clone(),
        reps,
        rmse_mean,
        rmse_std,
        per_rep_rmse: per_rep,
        flagged,
        converged_at: converged,
        sigma: spec.kernel.sigma,
        n,
        horizon: spec.horizon,
        dt: spec.kernel.dt,
        wall_time_s: start.elapsed().as_secs_f64(),
        seed,
    })
}

/// Simulates the system under `policy`, holding the control constant over
/// each interval of length `dt`. Returns the states at `t = 0, dt, …, T`.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    system: &ControlAffineSystem,
    policy: impl Fn(&[f64]) -> Result<Vec<f64>>,
    x0: &[f64],
    horizon_t: f64,
    dt: f64,
    epsilon: f64,
    substeps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    ensure(x0.len() == system.n_x, || "initial state has the wrong dimension".into())?;
    ensure(dt > 0.0 && horizon_t >= 0.0, || "need dt > 0 and T >= 0".into())?;
    let steps = (horizon_t / dt).round() as usize;
    let limit = system.domain.scaled(10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(x0.to_vec());
    for k in 0..steps {
        let x = traj.last().expect("non-empty");
        let u = policy(x)?;
        let next = euler_maruyama_step(system, x, &u, dt, epsilon, substeps, &mut rng)?;
        if !limit.contains(&next) {
            let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Err(Error::Rollout {
                time: (k + 1) as f64 * dt,
                norm,
            });
        }
        traj.push(next);
    }
    Ok(traj)
}

/// Rollout under the learned stationary law.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_rollout(
    system: &ControlAffineSystem,
    interp: &PolicyInterpolator<'_>,
    x0: &[f64],
    horizon_t: f64,
    dt: f64,
    epsilon: f64,
    substeps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    rollout(system, |x| interp.stationary(x), x0, horizon_t, dt, epsilon, substeps, seed)
}

/// Stabilizing solution of `2ap − b²p²/r + q = 0`; returns the gain `−bp/r`.
pub fn riccati_reference(a: f64, b: f64, q: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Oracle(format!("r must be > 0, got {r}")));
    }
    if b == 0.0 {
        return Err(Error::Oracle("b = 0: the system is not stabilizable".into()));
    }
    if q < 0.0 {
        return Err(Error::Oracle(format!("q must be >= 0, got {q}")));
    }
    let b2 = b * b;
    let s = (a * a + b2 * q / r).sqrt();
    // Closed-loop pole a − b²p/r = −s must be strictly stable.
    if s == 0.0 {
        return Err(Error::Oracle("no stabilizing root (marginal closed loop)".into()));
    }
    let p = r * (a + s) / b2;
    Ok(-b * p / r)
}

/// Least-squares slope of the stationary policy table against the scalar
/// training states, `Σ π_i x_i / Σ x_i²`.
pub fn least_squares_gain(dataset: &Dataset, sol: &ValueSolution) -> Result<f64> {
    ensure(dataset.n_x() == 1 && sol.n_u == 1, || "gain fit needs a scalar system".into())?;
    let pi = sol.policy_component(sol.stationary_step(), 0);
    let (num, den) = (0..dataset.len()).fold((0.0, 0.0), |(n, d), i| {
        let x = dataset.x[(0, i)];
        (n + pi[i] * x, d + x * x)
    });
    ensure(den > 0.0, || "all training states are zero".into())?;
    Ok(num / den)
}

/// `run_benchmark` for each sample count in `n_grid` (ascending).
pub fn convergence_sweep(
    spec: &BenchmarkSpec,
    n_grid: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchReport>> {
    ensure(!n_grid.is_empty(), || "empty N grid".into())?;
    ensure(n_grid.windows(2).all(|w| w[0] < w[1]), || "N grid must be ascending".into())?;
    n_grid
        .iter()
        .map(|&n| {
            let s = BenchmarkSpec {
                data: DatasetSpec { n, ..spec.data.clone() },
                ..spec.clone()
            };
            run_benchmark(&s, reps, splitmix64(seed ^ n as u64))
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`, skipping non-finite points.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    ensure(pts.len() >= 2, || "need at least two finite points for a slope".into())?;
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    ensure(sxx > 0.0, || "all N values are equal".into())?;
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(m: usize) -> Mat<f64> {
        Mat::from_fn(1, m, |_, j| -3.0 + 6.0 * j as f64 / (m - 1) as f64)
    }

    #[test]
    fn rmse_examples() {
        let pts = line(100);
        let id = |x: &[f64]| vec![2.0 * x[0]];
        assert_eq!(rmse_policy(|x| Ok(id(x)), id, pts.as_ref()).unwrap(), 0.0);
        let off = rmse_policy(|x| Ok(vec![2.0 * x[0] - 0.3]), id, pts.as_ref()).unwrap();
        assert!((off - 0.3).abs() < 1e-14);

        let sqrt2 = std::f64::consts::SQRT_2;
        let r = rmse_policy(|x| Ok(vec![-1.4 * x[0]]), |x| vec![-sqrt2 * x[0]], pts.as_ref()).unwrap();
        let mean_sq = (0..100).map(|j| pts[(0, j)].powi(2)).sum::<f64>() / 100.0;
        assert!((r - (sqrt2 - 1.4) * mean_sq.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn riccati_examples() {
        let g = riccati_reference(0.5, std::f64::consts::SQRT_2, 1.0, 1.0).unwrap();
        assert!((g + std::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(riccati_reference(-1.0, 1.0, 0.0, 1.0).unwrap(), 0.0);
        assert!((riccati_reference(0.0, 1.0, 1.0, 1.0).unwrap() + 1.0).abs() < 1e-15);
        assert!(riccati_reference(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(riccati_reference(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(riccati_reference(0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn riccati_root_solves_the_equation() {
        for (a, b, q, r) in [(0.3, 2.0, 0.7, 0.4), (-2.0, 0.5, 3.0, 1.5), (1.0, -1.0, 2.0, 1.0)] {
            let gain = riccati_reference(a, b, q, r).unwrap();
            let p = -gain * r / b;
            assert!((2.0 * a * p - b * b * p * p / r + q).abs() < 1e-12);
            assert!(a + b * gain < 0.0);
        }
    }

    #[test]
    fn grid_layout() {
        let dom = systems::BoxDomain::cube(2, -3.0, 3.0);
        let g = test_grid(&dom, 30);
        assert_eq!(g.shape(), (2, 900));
        assert_eq!((g[(0, 0)], g[(1, 0)]), (-3.0, -3.0));
        assert_eq!((g[(0, 29)], g[(1, 29)]), (-3.0, 3.0));
        assert_eq!((g[(0, 899)], g[(1, 899)]), (3.0, 3.0));
    }

    #[test]
    fn statistics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - std::f64::consts::SQRT_2).abs() < 1e-15);
        let slope = loglog_slope(&[(100.0, 1.0), (400.0, 0.5), (1600.0, 0.25)]).unwrap();
        assert!((slope + 0.5).abs() < 1e-12);
        assert!(loglog_slope(&[(100.0, 1.0)]).is_err());
    }

    #[test]
    fn seeds_differ_per_rep() {
        let seeds: Vec<u64> = (0..50).map(|r| rep_seed(7, r)).collect();
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 50);
    }

    #[test]
    fn static_rollout_is_constant() {
        let sys = ControlAffineSystem {
            drift: std::sync::Arc::new(|_| vec![0.0]),
            input_map: std::sync::Arc::new(|_| vec![0.0]),
            ..systems::registry("s1").unwrap()
        };
        let traj = rollout(&sys, |_| Ok(vec![0.0]), &[0.7], 1.0, 0.1, 0.0, 5, 0).unwrap();
        assert_eq!(traj.len(), 11);
        assert!(traj.iter().all(|x| x == &vec![0.7]));
    }
}
