//! Gaussian RBF kernels, the diffused (Euler–Maruyama) kernel and the Gram
//! matrices built from them.
//!
//! Data matrices follow the column convention used throughout the crate: an
//! `n_x × N` matrix holds one sample per column.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Closed form used for the diffused kernel `εk`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiffusedMode {
    /// Bandwidth `σ² + 2εΔt`.
    #[default]
    PaperPrinted,
    /// Bandwidth `σ² + 4εΔt`: the exact expectation of the RBF kernel over
    /// an added `N(0, 2εΔt I)` perturbation.
    ExactExpectation,
}

impl DiffusedMode {
    pub fn code(self) -> f64 {
        match self {
            DiffusedMode::PaperPrinted => 0.0,
            DiffusedMode::ExactExpectation => 1.0,
        }
    }

    pub fn from_code(code: f64) -> Result<Self> {
        match code {
            c if c == 0.0 => Ok(DiffusedMode::PaperPrinted),
            c if c == 1.0 => Ok(DiffusedMode::ExactExpectation),
            other => Err(Error::Parse(format!("unknown diffused mode code {other}"))),
        }
    }
}

impl std::str::FromStr for DiffusedMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_printed" => Ok(DiffusedMode::PaperPrinted),
            "exact_expectation" => Ok(DiffusedMode::ExactExpectation),
            other => Err(Error::Config(format!(
                "diffused_mode must be paper_printed or exact_expectation, got `{other}`"
            ))),
        }
    }
}

/// Kernel and discretization hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// RBF length scale σ.
    pub sigma: f64,
    /// Diffusion parameter ε of the SDE `dX = (f + Gu)dt + √(2ε) dW`.
    pub epsilon: f64,
    /// Sampling time Δt.
    pub dt: f64,
    /// Tikhonov regularization γ.
    pub gamma: f64,
    pub diffused_mode: DiffusedMode,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            epsilon: 0.02,
            dt: 1e-2,
            gamma: 1e-8,
            diffused_mode: DiffusedMode::PaperPrinted,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.sigma) && self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(ok(self.dt) && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(ok(self.epsilon) && self.epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(ok(self.gamma) && self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Squared bandwidth of the diffused kernel for the configured mode.
    pub fn diffused_bandwidth(&self) -> f64 {
        let spread = match self.diffused_mode {
            DiffusedMode::PaperPrinted => 2.0 * self.epsilon * self.dt,
            DiffusedMode::ExactExpectation => 4.0 * self.epsilon * self.dt,
        };
        self.sigma * self.sigma + spread
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(-‖x − y‖² / σ²)`.
pub fn rbf_eval(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    ensure(x.len() == y.len(), || {
        format!("dimension mismatch: {} vs {}", x.len(), y.len())
    })?;
    ensure(sigma > 0.0, || format!("sigma must be > 0, got {sigma}"))?;
    Ok(rbf_unchecked(x, y, sigma * sigma))
}

#[inline]
fn rbf_unchecked(x: &[f64], y: &[f64], sigma_sq: f64) -> f64 {
    (-sq_dist(x, y) / sigma_sq).exp()
}

/// Precomputed constants of the diffused kernel for a fixed configuration.
#[derive(Debug, Clone, Copy)]
struct Diffused {
    bandwidth: f64,
    prefactor: f64,
    plain: bool,
}

impl Diffused {
    fn new(cfg: &KernelConfig, n_x: usize) -> Self {
        let s2 = cfg.sigma * cfg.sigma;
        if cfg.epsilon == 0.0 {
            return Self {
                bandwidth: s2,
                prefactor: 1.0,
                plain: true,
            };
        }
        let bandwidth = cfg.diffused_bandwidth();
        // One factor (σ²/bandwidth)^{1/2} per state dimension.
        let prefactor = (s2 / bandwidth).powf(n_x as f64 / 2.0);
        Self {
            bandwidth,
            prefactor,
            plain: false,
        }
    }

    #[inline]
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        if self.plain {
            rbf_unchecked(x, y, self.bandwidth)
        } else {
            self.prefactor * rbf_unchecked(x, y, self.bandwidth)
        }
    }
}

/// Diffused kernel `εk(x, y)`; reduces to [`rbf_eval`] bit-for-bit when ε = 0.
pub fn diffused_rbf_eval(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<f64> {
    cfg.validate()?;
    ensure(x.len() == y.len(), || {
        format!("dimension mismatch: {} vs {}", x.len(), y.len())
    })?;
    Ok(Diffused::new(cfg, x.len()).eval(x, y))
}

fn columns(m: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)]).collect())
        .collect()
}

/// Gram matrix `K_X = [k(x_i, x_j)]`; each entry is computed once and mirrored.
pub fn gram(x: MatRef<'_, f64>, sigma: f64) -> Result<Mat<f64>> {
    ensure(x.ncols() >= 1, || "empty dataset".into())?;
    ensure(sigma > 0.0, || format!("sigma must be > 0, got {sigma}"))?;
    let pts = columns(x);
    let n = pts.len();
    let s2 = sigma * sigma;
    let mut k = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = 1.0;
        for i in (j + 1)..n {
            let v = rbf_unchecked(&pts[i], &pts[j], s2);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Control-tensorized Gram matrix `K_U = K_X ⊙ (1 1ᵀ + UᵀU)`.
pub fn control_gram(kx: MatRef<'_, f64>, u: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let n = kx.nrows();
    ensure(kx.ncols() == n, || "K_X must be square".into())?;
    ensure(u.ncols() == n, || {
        format!("U has {} columns but K_X is {n}x{n}", u.ncols())
    })?;
    let mut ku = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let mut inner = 1.0;
            for m in 0..u.nrows() {
                inner += u[(m, i)] * u[(m, j)];
            }
            let v = kx[(i, j)] * inner;
            ku[(i, j)] = v;
            ku[(j, i)] = v;
        }
    }
    Ok(ku)
}

/// The same matrix through the sum of diagonal scalings
/// `K_X + Σ_m U_m K_X U_m`, with `U_m = diag(u_m)`.
pub fn control_gram_sum_form(kx: MatRef<'_, f64>, u: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let n = kx.nrows();
    ensure(kx.ncols() == n && u.ncols() == n, || "shape mismatch".into())?;
    let mut ku = kx.to_owned();
    for m in 0..u.nrows() {
        for j in 0..n {
            for i in 0..n {
                ku[(i, j)] += u[(m, i)] * kx[(i, j)] * u[(m, j)];
            }
        }
    }
    Ok(ku)
}

/// Euler–Maruyama cross-covariance `[εk(x_i, y_j)]`: rows index training
/// inputs, columns index successor states.
pub fn cross_gram_diffused(
    x: MatRef<'_, f64>,
    y: MatRef<'_, f64>,
    cfg: &KernelConfig,
) -> Result<Mat<f64>> {
    cfg.validate()?;
    ensure(x.shape() == y.shape(), || {
        format!("X is {:?} but Y is {:?}", x.shape(), y.shape())
    })?;
    ensure(x.ncols() >= 1, || "empty dataset".into())?;
    cross_gram_diffused_between(x, y, cfg)
}

/// `[εk(a_i, b_j)]` for point sets of possibly different sizes.
pub fn cross_gram_diffused_between(
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
    cfg: &KernelConfig,
) -> Result<Mat<f64>> {
    cfg.validate()?;
    ensure(a.nrows() == b.nrows(), || "dimension mismatch".into())?;
    let kernel = Diffused::new(cfg, a.nrows());
    let az = columns(a);
    let bz = columns(b);
    Ok(Mat::from_fn(az.len(), bz.len(), |i, j| kernel.eval(&az[i], &bz[j])))
}

/// Plain RBF cross matrix `[k(a_i, b_j)]` between two point sets.
pub fn cross_gram(a: MatRef<'_, f64>, b: MatRef<'_, f64>, sigma: f64) -> Result<Mat<f64>> {
    ensure(a.nrows() == b.nrows(), || "dimension mismatch".into())?;
    ensure(sigma > 0.0, || format!("sigma must be > 0, got {sigma}"))?;
    let s2 = sigma * sigma;
    let az = columns(a);
    let bz = columns(b);
    Ok(Mat::from_fn(az.len(), bz.len(), |i, j| {
        rbf_unchecked(&az[i], &bz[j], s2)
    }))
}

/// Row `k_{xX} = [k(x, x_1), …, k(x, x_N)]`.
pub fn cross_vector(x: &[f64], data: MatRef<'_, f64>, sigma: f64) -> Result<Vec<f64>> {
    ensure(x.len() == data.nrows(), || {
        format!("query has dimension {} but data has {}", x.len(), data.nrows())
    })?;
    ensure(sigma > 0.0, || format!("sigma must be > 0, got {sigma}"))?;
    let s2 = sigma * sigma;
    let mut col = vec![0.0; data.nrows()];
    Ok((0..data.ncols())
        .map(|j| {
            for (i, c) in col.iter_mut().enumerate() {
                *c = data[(i, j)];
            }
            rbf_unchecked(x, &col, s2)
        })
        .collect())
}

/// The three matrices the estimator needs.
#[derive(Debug, Clone)]
pub struct GramBundle {
    pub kx: Mat<f64>,
    pub ku: Mat<f64>,
    pub ekxy: Mat<f64>,
}

impl GramBundle {
    pub fn build(
        x: MatRef<'_, f64>,
        u: MatRef<'_, f64>,
        y: MatRef<'_, f64>,
        cfg: &KernelConfig,
    ) -> Result<Self> {
        let kx = gram(x, cfg.sigma)?;
        let ku = control_gram(kx.as_ref(), u)?;
        let ekxy = cross_gram_diffused(x, y, cfg)?;
        Ok(Self { kx, ku, ekxy })
    }

    pub fn len(&self) -> usize {
        self.kx.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Symmetry of `K_X`, `K_U` (relative 1e-12) and positive
    /// semidefiniteness of `K_U` (λ_min ≥ −1e-10 · trace/N).
    pub fn check(&self) -> Result<()> {
        for (name, m) in [("K_X", &self.kx), ("K_U", &self.ku)] {
            let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(1.0, f64::max);
            let asym = crate::linalg::max_abs_diff(m.as_ref(), m.transpose());
            if asym > 1e-12 * scale {
                return Err(Error::Invariant(format!("{name} not symmetric ({asym:e})")));
            }
        }
        let lambda_min = smallest_eigenvalue(self.ku.as_ref())?;
        let n = self.ku.nrows() as f64;
        let trace: f64 = (0..self.ku.nrows()).map(|i| self.ku[(i, i)]).sum();
        if lambda_min < -1e-10 * trace / n {
            return Err(Error::Invariant(format!(
                "K_U has eigenvalue {lambda_min:e} below the PSD tolerance"
            )));
        }
        Ok(())
    }
}

pub fn smallest_eigenvalue(m: MatRef<'_, f64>) -> Result<f64> {
    let ev = m
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|_| Error::Scoring)?;
    Ok(ev.first().copied().unwrap_or(f64::NAN))
}
