//! Control-affine benchmark systems, Euler–Maruyama integration and snapshot
//! dataset generation.

use std::fmt;
use std::sync::Arc;

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::hjb::ControlPenalty;

/// A map from a state to a vector (drift, policy) or to a scalar.
pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Axis-aligned box `[lo_1, hi_1] × … × [lo_n, hi_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        ensure(lo.len() == hi.len() && !lo.is_empty(), || {
            "box bounds must be non-empty and of equal length".into()
        })?;
        ensure(lo.iter().zip(&hi).all(|(l, h)| l < h), || {
            format!("box requires lo < hi, got {lo:?} / {hi:?}")
        })?;
        Ok(Self { lo, hi })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Same center, half-widths multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| {
                let c = 0.5 * (l + h);
                let r = 0.5 * (h - l) * factor;
                (c - r, c + r)
            })
            .unzip();
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| rng.random_range(*l..=*h))
            .collect()
    }
}

/// `ẋ = f(x) + G(x) u` together with its benchmark metadata.
#[derive(Clone)]
pub struct ControlAffineSystem {
    pub name: String,
    pub n_x: usize,
    pub n_u: usize,
    /// `f(x)`, length `n_x`.
    pub drift: VectorField,
    /// `G(x)` in row-major order, length `n_x * n_u`.
    pub input_map: VectorField,
    /// State-dependent running cost `ℓ(x)`.
    pub state_cost: ScalarField,
    pub penalty: ControlPenalty,
    /// `X_S`, where training states are drawn.
    pub domain: BoxDomain,
    /// `U_S`, where training controls are drawn.
    pub control_box: BoxDomain,
    pub ground_truth_policy: Option<VectorField>,
    /// States for which the drift is not evaluated (sampling rejects them).
    pub excluded: Option<Arc<dyn Fn(&[f64]) -> bool + Send + Sync>>,
}

impl fmt::Debug for ControlAffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("name", &self.name)
            .field("n_x", &self.n_x)
            .field("n_u", &self.n_u)
            .field("penalty", &self.penalty)
            .field("domain", &self.domain)
            .field("control_box", &self.control_box)
            .finish_non_exhaustive()
    }
}

impl ControlAffineSystem {
    /// `f(x) + G(x) u`.
    pub fn vector_field(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut dx = (self.drift)(x);
        let g = (self.input_map)(x);
        for (i, d) in dx.iter_mut().enumerate() {
            for (m, um) in u.iter().enumerate() {
                *d += g[i * self.n_u + m] * um;
            }
        }
        dx
    }

    pub fn is_excluded(&self, x: &[f64]) -> bool {
        self.excluded.as_ref().is_some_and(|e| e(x))
    }

    /// Checks that the drift and input map are finite and the state cost is
    /// bounded below (by zero for the built-in systems) on `samples` random
    /// domain points.
    pub fn check(&self, samples: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let x = self.domain.sample(&mut rng);
            if self.is_excluded(&x) {
                continue;
            }
            let finite = (self.drift)(&x).iter().all(|v| v.is_finite())
                && (self.input_map)(&x).iter().all(|v| v.is_finite());
            let cost = (self.state_cost)(&x);
            if !finite || !cost.is_finite() || cost < 0.0 {
                return Err(Error::Invariant(format!(
                    "system {} is not finite/bounded below at {x:?}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

fn scalar_system(
    name: &str,
    f: fn(f64) -> f64,
    g: fn(f64) -> f64,
    truth: fn(f64) -> f64,
    domain: f64,
) -> ControlAffineSystem {
    ControlAffineSystem {
        name: name.into(),
        n_x: 1,
        n_u: 1,
        drift: Arc::new(move |x| vec![f(x[0])]),
        input_map: Arc::new(move |x| vec![g(x[0])]),
        state_cost: Arc::new(|x| x[0] * x[0]),
        penalty: ControlPenalty::quadratic(vec![1.0]),
        domain: BoxDomain::cube(1, -domain, domain),
        control_box: BoxDomain::cube(1, -1.0, 1.0),
        ground_truth_policy: Some(Arc::new(move |x| vec![truth(x[0])])),
        excluded: None,
    }
}

fn s1() -> ControlAffineSystem {
    let g = |_: f64| std::f64::consts::SQRT_2;
    scalar_system("s1", |x| 0.5 * x, g, |x| -std::f64::consts::SQRT_2 * x, 3.0)
}

fn s2_g(x: f64) -> f64 {
    (x * x).ln()
}

fn s2() -> ControlAffineSystem {
    let mut sys = scalar_system(
        "s2",
        |x| {
            let l = s2_g(x);
            -0.5 * x * (1.0 - l * l)
        },
        s2_g,
        |x| -s2_g(x) * x,
        3.0,
    );
    sys.excluded = Some(Arc::new(|x| x[0].abs() < 1e-6));
    sys
}

fn s3_g(x: f64) -> f64 {
    0.5 + (2.0 * x).sin()
}

fn s3() -> ControlAffineSystem {
    scalar_system(
        "s3",
        |x| {
            let s = (2.0 * x).sin();
            -0.375 * x + 0.5 * x * s + 0.5 * x * s * s
        },
        s3_g,
        |x| -s3_g(x) * x,
        3.0,
    )
}

fn s4() -> ControlAffineSystem {
    scalar_system(
        "s4",
        |x| -x * x * x,
        |_| 1.0,
        |x| x * x * x - x * (1.0 + x.powi(4)).sqrt(),
        5.0,
    )
}

fn vdp() -> ControlAffineSystem {
    ControlAffineSystem {
        name: "vdp".into(),
        n_x: 2,
        n_u: 1,
        drift: Arc::new(|x| vec![x[1], -x[0] - 0.5 * x[1] * (1.0 - x[0] * x[0])]),
        input_map: Arc::new(|x| vec![0.0, x[0]]),
        state_cost: Arc::new(|x| 0.5 * x[1] * x[1]),
        penalty: ControlPenalty::quadratic(vec![0.5]),
        domain: BoxDomain::cube(2, -3.0, 3.0),
        control_box: BoxDomain::cube(1, -1.0, 1.0),
        ground_truth_policy: Some(Arc::new(|x| vec![-x[0] * x[1]])),
        excluded: None,
    }
}

/// Names accepted by [`registry`].
pub const SYSTEM_NAMES: [&str; 5] = ["s1", "s2", "s3", "s4", "vdp"];

/// Built-in benchmark systems by (case-insensitive) name.
pub fn registry(name: &str) -> Result<ControlAffineSystem> {
    match name.to_ascii_lowercase().as_str() {
        "s1" => Ok(s1()),
        "s2" => Ok(s2()),
        "s3" => Ok(s3()),
        "s4" => Ok(s4()),
        "vdp" => Ok(vdp()),
        _ => Err(Error::UnknownSystem(name.into())),
    }
}

/// Integrates `dX = (f + Gu)dt + √(2ε)dW` over `[0, dt]` with `substeps`
/// Euler–Maruyama steps. No random numbers are drawn when `epsilon == 0`.
pub fn euler_maruyama_step(
    system: &ControlAffineSystem,
    x: &[f64],
    u: &[f64],
    dt: f64,
    epsilon: f64,
    substeps: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    ensure(substeps >= 1, || "substeps must be >= 1".into())?;
    ensure(x.len() == system.n_x && u.len() == system.n_u, || {
        format!(
            "state/control dimension {}/{} does not match system {}/{}",
            x.len(),
            u.len(),
            system.n_x,
            system.n_u
        )
    })?;
    let h = dt / substeps as f64;
    let noise = (2.0 * epsilon * h).sqrt();
    let mut state = x.to_vec();
    for step in 0..substeps {
        let dx = system.vector_field(&state, u);
        for (s, d) in state.iter_mut().zip(&dx) {
            *s += d * h;
            if epsilon > 0.0 {
                let w: f64 = rng.sample(StandardNormal);
                *s += noise * w;
            }
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { step });
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    #[default]
    UniformIid,
    /// Inclusive lattice with `⌊N^{1/n_x}⌋` points per axis.
    Grid,
}

impl std::str::FromStr for Sampler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_iid" | "iid" => Ok(Sampler::UniformIid),
            "grid" => Ok(Sampler::Grid),
            other => Err(Error::Config(format!(
                "sampler must be uniform_iid or grid, got `{other}`"
            ))),
        }
    }
}

/// How the successor states `y` are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Successors {
    /// Noise-free flow of `f + Gu`; the diffusion enters only through the
    /// diffused kernel `εk`.
    #[default]
    Deterministic,
    /// One sampled Euler–Maruyama path per sample.
    Sampled,
}

impl Successors {
    pub fn as_str(self) -> &'static str {
        match self {
            Successors::Deterministic => "deterministic",
            Successors::Sampled => "sampled",
        }
    }
}

impl std::str::FromStr for Successors {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Successors::Deterministic),
            "sampled" => Ok(Successors::Sampled),
            other => Err(Error::Config(format!(
                "successors must be deterministic or sampled, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n: usize,
    pub dt: f64,
    pub epsilon: f64,
    pub substeps: usize,
    pub sampler: Sampler,
    pub successors: Successors,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            dt: 1e-2,
            epsilon: 0.02,
            substeps: 10,
            sampler: Sampler::UniformIid,
            successors: Successors::Deterministic,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    /// Benchmark sample count, sampler and `Δt` of a built-in system.
    pub fn for_system(system: &ControlAffineSystem) -> Self {
        let (n, dt, sampler) = match system.name.as_str() {
            "s2" | "s3" => (1000, 1e-3, Sampler::UniformIid),
            "s4" => (400, 1e-2, Sampler::UniformIid),
            "vdp" => (2500, 1e-2, Sampler::Grid),
            _ => (1000, 1e-2, Sampler::UniformIid),
        };
        Self {
            n,
            dt,
            sampler,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        ensure(self.n >= 1, || "N must be >= 1".into())?;
        ensure(self.substeps >= 1, || "substeps must be >= 1".into())?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Snapshot data: one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub system: String,
    /// `n_x × N` initial states.
    pub x: Mat<f64>,
    /// `n_u × N` controls.
    pub u: Mat<f64>,
    /// `n_x × N` successor states.
    pub y: Mat<f64>,
    /// `ℓ(x^(i)) Δt`.
    pub cost: Vec<f64>,
    pub dt: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub successors: Successors,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_x(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.u.nrows()
    }

    /// Running-cost rate `ℓ(x^(i)) = cost_i / Δt`.
    pub fn stage_cost(&self) -> Vec<f64> {
        self.cost.iter().map(|c| c / self.dt).collect()
    }

    pub fn state(&self, i: usize) -> Vec<f64> {
        crate::linalg::column(self.x.as_ref(), i)
    }

    pub fn control(&self, i: usize) -> Vec<f64> {
        crate::linalg::column(self.u.as_ref(), i)
    }

    /// Shapes agree and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let n = self.x.ncols();
        if n == 0 {
            return Err(Error::Input("dataset has no samples".into()));
        }
        if self.u.ncols() != n || self.y.ncols() != n || self.cost.len() != n {
            return Err(Error::Invariant(format!(
                "sample counts disagree: X {n}, U {}, Y {}, cost {}",
                self.u.ncols(),
                self.y.ncols(),
                self.cost.len()
            )));
        }
        if self.y.nrows() != self.x.nrows() {
            return Err(Error::Invariant("X and Y state dimensions differ".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Invariant(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Invariant(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        let finite = |m: &Mat<f64>| {
            (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].is_finite()))
        };
        if !(finite(&self.x) && finite(&self.u) && finite(&self.y))
            || self.cost.iter().any(|c| !c.is_finite())
        {
            return Err(Error::Invariant("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let pick = |m: &Mat<f64>| Mat::from_fn(m.nrows(), indices.len(), |i, j| m[(i, indices[j])]);
        Dataset {
            system: self.system.clone(),
            x: pick(&self.x),
            u: pick(&self.u),
            y: pick(&self.y),
            cost: indices.iter().map(|&i| self.cost[i]).collect(),
            dt: self.dt,
            epsilon: self.epsilon,
            seed: self.seed,
            successors: self.successors,
        }
    }
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Largest `m` with `m^dim ≤ n`.
fn lattice_side(n: usize, dim: usize) -> usize {
    let mut m = (n as f64).powf(1.0 / dim as f64).round() as usize + 1;
    while m > 1 && m.checked_pow(dim as u32).is_none_or(|p| p > n) {
        m -= 1;
    }
    m.max(1)
}

fn lattice(domain: &BoxDomain, side: usize) -> Vec<Vec<f64>> {
    let dim = domain.dim();
    let axis = |d: usize, k: usize| {
        if side == 1 {
            0.5 * (domain.lo[d] + domain.hi[d])
        } else {
            domain.lo[d] + (domain.hi[d] - domain.lo[d]) * k as f64 / (side - 1) as f64
        }
    };
    let total = side.pow(dim as u32);
    (0..total)
        .map(|mut flat| {
            // First coordinate varies slowest.
            let mut idx = vec![0; dim];
            for d in (0..dim).rev() {
                idx[d] = flat % side;
                flat /= side;
            }
            (0..dim).map(|d| axis(d, idx[d])).collect()
        })
        .collect()
}

/// Draws `N` samples according to `spec` and integrates each one step.
///
/// In grid mode `N` is rounded down to a full lattice; the returned dataset
/// reports the actual count. Every sample has its own RNG stream derived from
/// `(seed, index)`.
pub fn generate_dataset(system: &ControlAffineSystem, spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let grid = match spec.sampler {
        Sampler::UniformIid => None,
        Sampler::Grid => {
            let side = lattice_side(spec.n, system.n_x);
            let points = lattice(&system.domain, side);
            if points.len() != spec.n {
                log::warn!(
                    "grid sampler: N = {} is not a full lattice, using N = {}",
                    spec.n,
                    points.len()
                );
            }
            Some(points)
        }
    };
    let n = grid.as_ref().map_or(spec.n, Vec::len);
    let mut xs = Vec::with_capacity(n);
    let mut us = Vec::with_capacity(n);
    let mut rngs = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = sample_rng(spec.seed, i);
        let x = match &grid {
            Some(points) => points[i].clone(),
            None => loop {
                let x = system.domain.sample(&mut rng);
                if !system.is_excluded(&x) {
                    break x;
                }
            },
        };
        us.push(system.control_box.sample(&mut rng));
        xs.push(x);
        rngs.push(rng);
    }
    let x = Mat::from_fn(system.n_x, n, |r, c| xs[c][r]);
    let u = Mat::from_fn(system.n_u, n, |r, c| us[c][r]);
    simulate_with(system, x.as_ref(), u.as_ref(), spec, rngs)
}

/// Builds a dataset from prescribed states and controls.
pub fn simulate(
    system: &ControlAffineSystem,
    x: MatRef<'_, f64>,
    u: MatRef<'_, f64>,
    spec: &DatasetSpec,
) -> Result<Dataset> {
    spec.validate()?;
    let rngs = (0..x.ncols()).map(|i| sample_rng(spec.seed, i)).collect();
    simulate_with(system, x, u, spec, rngs)
}

fn simulate_with(
    system: &ControlAffineSystem,
    x: MatRef<'_, f64>,
    u: MatRef<'_, f64>,
    spec: &DatasetSpec,
    mut rngs: Vec<ChaCha8Rng>,
) -> Result<Dataset> {
    let n = x.ncols();
    ensure(n >= 1, || "N must be >= 1".into())?;
    ensure(x.nrows() == system.n_x && u.nrows() == system.n_u && u.ncols() == n, || {
        "state/control matrices do not match the system".into()
    })?;
    let noise = match spec.successors {
        Successors::Deterministic => 0.0,
        Successors::Sampled => spec.epsilon,
    };
    let mut y = Mat::<f64>::zeros(system.n_x, n);
    let mut cost = Vec::with_capacity(n);
    for (i, rng) in rngs.iter_mut().enumerate() {
        let xi = crate::linalg::column(x, i);
        let ui = crate::linalg::column(u, i);
        let yi = euler_maruyama_step(system, &xi, &ui, spec.dt, noise, spec.substeps, rng)?;
        for (r, v) in yi.into_iter().enumerate() {
            y[(r, i)] = v;
        }
        cost.push((system.state_cost)(&xi) * spec.dt);
    }
    Ok(Dataset {
        system: system.name.clone(),
        x: x.to_owned(),
        u: u.to_owned(),
        y,
        cost,
        dt: spec.dt,
        epsilon: spec.epsilon,
        seed: spec.seed,
        successors: spec.successors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_system() -> ControlAffineSystem {
        ControlAffineSystem {
            name: "static".into(),
            n_x: 1,
            n_u: 1,
            drift: Arc::new(|_| vec![0.0]),
            input_map: Arc::new(|_| vec![0.0]),
            state_cost: Arc::new(|x| x[0] * x[0]),
            penalty: ControlPenalty::quadratic(vec![1.0]),
            domain: BoxDomain::cube(1, -1.0, 1.0),
            control_box: BoxDomain::cube(1, -1.0, 1.0),
            ground_truth_policy: None,
            excluded: None,
        }
    }

    #[test]
    fn one_euler_step_on_s4() {
        let sys = registry("s4").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = euler_maruyama_step(&sys, &[1.0], &[0.0], 0.01, 0.0, 1, &mut rng).unwrap();
        assert!((y[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn static_system_stays_put() {
        let sys = static_system();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for dt in [1e-3, 0.5, 10.0] {
            let y = euler_maruyama_step(&sys, &[0.3], &[0.7], dt, 0.0, 4, &mut rng).unwrap();
            assert_eq!(y, vec![0.3]);
        }
    }

    #[test]
    fn pure_noise_variance() {
        let sys = static_system();
        let (eps, dt) = (0.05, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| euler_maruyama_step(&sys, &[0.0], &[0.0], dt, eps, 3, &mut rng).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let target = 2.0 * eps * dt;
        assert!((var - target).abs() / target < 0.05, "{var} vs {target}");
    }

    #[test]
    fn non_finite_state_reports_substep() {
        let mut sys = static_system();
        sys.drift = Arc::new(|x| vec![if x[0] > 1.5 { f64::INFINITY } else { 1.0 }]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = euler_maruyama_step(&sys, &[0.0], &[0.0], 4.0, 0.0, 4, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Integration { step: 2 }), "{err}");
    }

    #[test]
    fn forced_sample_dataset() {
        let sys = registry("s4").unwrap();
        let spec = DatasetSpec {
            n: 1,
            epsilon: 0.0,
            substeps: 1,
            ..DatasetSpec::default()
        };
        let x = Mat::from_fn(1, 1, |_, _| 1.0);
        let u = Mat::<f64>::zeros(1, 1);
        let d = simulate(&sys, x.as_ref(), u.as_ref(), &spec).unwrap();
        assert!((d.y[(0, 0)] - 0.99).abs() < 1e-15);
        assert_eq!(d.cost, vec![1.0 * 0.01]);
    }

    #[test]
    fn generation_is_deterministic_and_in_bounds() {
        let sys = registry("s1").unwrap();
        let spec = DatasetSpec {
            n: 1000,
            seed: 7,
            successors: Successors::Sampled,
            ..DatasetSpec::default()
        };
        let a = generate_dataset(&sys, &spec).unwrap();
        let b = generate_dataset(&sys, &spec).unwrap();
        assert_eq!(a, b);
        for i in 0..a.len() {
            assert!(sys.domain.contains(&a.state(i)));
            assert!(sys.control_box.contains(&a.control(i)));
            let expected = (sys.state_cost)(&a.state(i)) * spec.dt;
            assert!((a.cost[i] - expected).abs() <= 1e-14);
        }
        let c = generate_dataset(&sys, &DatasetSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn grid_rounds_down() {
        let sys = registry("vdp").unwrap();
        let spec = DatasetSpec {
            n: 2500,
            sampler: Sampler::Grid,
            ..DatasetSpec::default()
        };
        assert_eq!(generate_dataset(&sys, &spec).unwrap().len(), 2500);
        let d = generate_dataset(&sys, &DatasetSpec { n: 30, ..spec }).unwrap();
        assert_eq!(d.len(), 25);
        assert_eq!(d.state(0), vec![-3.0, -3.0]);
        assert_eq!(d.state(1), vec![-3.0, -1.5]);
        assert_eq!(d.state(24), vec![3.0, 3.0]);
    }

    #[test]
    fn lattice_side_edges() {
        assert_eq!(lattice_side(1, 2), 1);
        assert_eq!(lattice_side(3, 2), 1);
        assert_eq!(lattice_side(4, 2), 2);
        assert_eq!(lattice_side(100, 1), 100);
        assert_eq!(lattice_side(999, 3), 9);
        assert_eq!(lattice_side(1000, 3), 10);
    }

    #[test]
    fn registry_contents() {
        for name in SYSTEM_NAMES {
            let sys = registry(name).unwrap();
            sys.check(500, 1).unwrap();
            assert!(sys.ground_truth_policy.is_some());
        }
        assert!(matches!(registry("s9"), Err(Error::UnknownSystem(_))));
        let s2 = registry("S2").unwrap();
        assert!(s2.is_excluded(&[0.0]));
        let truth = s2.ground_truth_policy.unwrap();
        assert!((truth(&[2.0])[0] + 4f64.ln() * 2.0).abs() < 1e-15);
    }

    #[test]
    fn substep_refinement_converges_on_s4() {
        let sys = registry("s4").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut step = |k| euler_maruyama_step(&sys, &[2.0], &[0.5], 0.05, 0.0, k, &mut rng).unwrap()[0];
        let reference = step(1000);
        let errors: Vec<f64> = [1, 2, 5, 10, 50].iter().map(|&k| (step(k) - reference).abs()).collect();
        assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    }
}
