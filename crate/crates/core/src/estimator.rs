//! Kernel ridge regression estimates of the embedded transition operators,
//! the Markov projection and hyperparameter scoring.
//!
//! ```text
//! (K_U + γI) Â   = εK_XY
//! (K_U + γI) B̂_m = U_m εK_XY        U_m = diag(u_m^(1), …, u_m^(N))
//! ```

use std::sync::OnceLock;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::kernel::{self, GramBundle, KernelConfig};
use crate::linalg::{frobenius_sq, SpdFactor};
use crate::systems::Dataset;

/// Largest jitter tried before a factorization failure is reported.
pub const MAX_JITTER: f64 = 1e-4;

/// Which side of `εK_XY` the control coordinates scale when forming `B̂_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrientation {
    /// `U_m εK_XY`.
    #[default]
    Row,
    /// `εK_XY U_m`.
    Column,
}

impl BlockOrientation {
    pub fn code(self) -> f64 {
        match self {
            BlockOrientation::Row => 0.0,
            BlockOrientation::Column => 1.0,
        }
    }

    pub fn from_code(code: f64) -> Result<Self> {
        match code {
            c if c == 0.0 => Ok(BlockOrientation::Row),
            c if c == 1.0 => Ok(BlockOrientation::Column),
            other => Err(Error::Parse(format!("unknown block orientation code {other}"))),
        }
    }
}

impl std::str::FromStr for BlockOrientation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(BlockOrientation::Row),
            "column" => Ok(BlockOrientation::Column),
            other => Err(Error::Config(format!(
                "b_block_orientation must be row or column, got `{other}`"
            ))),
        }
    }
}

/// Fitted `Â`, `B̂_1 … B̂_{n_u}` together with the data they were fitted on.
#[derive(Debug, Clone)]
pub struct EstimatedOperators {
    pub a_hat: Mat<f64>,
    pub b_hat: Vec<Mat<f64>>,
    /// Cholesky factor of `K_U + γI`.
    pub gram_factor: SpdFactor,
    pub dataset: Dataset,
    /// Kernel configuration; `gamma` is the regularization actually used,
    /// which exceeds the requested one if jitter escalation kicked in.
    pub kernel: KernelConfig,
    pub orientation: BlockOrientation,
    pub markov_enforced: bool,
    kx_factor: OnceLock<SpdFactor>,
}

impl EstimatedOperators {
    /// Reassembles operators from stored matrices, refactoring `K_U + γI`.
    pub fn from_parts(
        a_hat: Mat<f64>,
        b_hat: Vec<Mat<f64>>,
        dataset: Dataset,
        kernel: KernelConfig,
        orientation: BlockOrientation,
        markov_enforced: bool,
    ) -> Result<Self> {
        kernel.validate()?;
        dataset.validate()?;
        let n = dataset.len();
        if a_hat.shape() != (n, n)
            || b_hat.len() != dataset.n_u()
            || b_hat.iter().any(|b| b.shape() != (n, n))
        {
            return Err(Error::Invariant("operator shapes disagree with the dataset".into()));
        }
        let finite = |m: &Mat<f64>| (0..n).all(|j| (0..n).all(|i| m[(i, j)].is_finite()));
        if !finite(&a_hat) || !b_hat.iter().all(finite) {
            return Err(Error::Invariant("operators contain non-finite entries".into()));
        }
        let kx = kernel::gram(dataset.x.as_ref(), kernel.sigma)?;
        let ku = kernel::control_gram(kx.as_ref(), dataset.u.as_ref())?;
        let gram_factor = SpdFactor::new(ku.as_ref(), kernel.gamma)?;
        Ok(Self {
            a_hat,
            b_hat,
            gram_factor,
            dataset,
            kernel,
            orientation,
            markov_enforced,
            kx_factor: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_u(&self) -> usize {
        self.b_hat.len()
    }

    /// Cholesky factor of `K_X + γI`, built on first use.
    pub fn kx_factor(&self) -> Result<&SpdFactor> {
        if let Some(f) = self.kx_factor.get() {
            return Ok(f);
        }
        let kx = kernel::gram(self.dataset.x.as_ref(), self.kernel.sigma)?;
        let f = factor_escalating(&kx, self.kernel.gamma)?;
        Ok(self.kx_factor.get_or_init(|| f))
    }

    /// `Â + Σ_m B̂_m diag(c_m)` for per-sample controls `c` (`n_u × N`).
    pub fn closed_loop(&self, controls: faer::MatRef<'_, f64>) -> Mat<f64> {
        let n = self.len();
        let mut m = self.a_hat.clone();
        for (k, b) in self.b_hat.iter().enumerate() {
            for j in 0..n {
                let c = controls[(k, j)];
                for i in 0..n {
                    m[(i, j)] += b[(i, j)] * c;
                }
            }
        }
        m
    }

    /// `‖(K_U + γI)Â − εK_XY‖_F`.
    pub fn residual_norm(&self) -> Result<f64> {
        let ekxy = kernel::cross_gram_diffused(
            self.dataset.x.as_ref(),
            self.dataset.y.as_ref(),
            &self.kernel,
        )?;
        let n = self.len();
        let mut r = ekxy;
        for j in 0..n {
            let col = crate::linalg::column(self.a_hat.as_ref(), j);
            let applied = self.gram_factor.apply(&col);
            for i in 0..n {
                r[(i, j)] = applied[i] - r[(i, j)];
            }
        }
        Ok(frobenius_sq(r.as_ref()).sqrt())
    }
}

/// Factors `m + γI`, raising the jitter tenfold (up to [`MAX_JITTER`]) when
/// `γ > 0` and the factorization fails.
pub(crate) fn factor_escalating(m: &Mat<f64>, gamma: f64) -> Result<SpdFactor> {
    let mut jitter = gamma;
    loop {
        match SpdFactor::new(m.as_ref(), jitter) {
            Ok(f) => {
                if jitter != gamma {
                    log::warn!("Gram factorization needed jitter {jitter:e} (requested {gamma:e})");
                }
                return Ok(f);
            }
            Err(e @ Error::NotPositiveDefinite { .. }) => {
                if jitter <= 0.0 || jitter * 10.0 > MAX_JITTER * (1.0 + 1e-12) {
                    return Err(e);
                }
                jitter *= 10.0;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Fits `Â` and `B̂` with row-scaled control blocks.
pub fn fit_krr(dataset: &Dataset, cfg: &KernelConfig) -> Result<EstimatedOperators> {
    fit_krr_with(dataset, cfg, BlockOrientation::Row)
}

pub fn fit_krr_with(
    dataset: &Dataset,
    cfg: &KernelConfig,
    orientation: BlockOrientation,
) -> Result<EstimatedOperators> {
    cfg.validate()?;
    dataset.validate()?;
    ensure(dataset.len() >= 2, || "fitting needs at least 2 samples".into())?;
    let grams = GramBundle::build(dataset.x.as_ref(), dataset.u.as_ref(), dataset.y.as_ref(), cfg)?;
    let factor = factor_escalating(&grams.ku, cfg.gamma)?;
    let n = grams.len();
    let a_hat = factor.solve(grams.ekxy.as_ref());
    let b_hat = (0..dataset.n_u())
        .map(|m| {
            let rhs = Mat::from_fn(n, n, |i, j| {
                let scale = match orientation {
                    BlockOrientation::Row => dataset.u[(m, i)],
                    BlockOrientation::Column => dataset.u[(m, j)],
                };
                scale * grams.ekxy[(i, j)]
            });
            factor.solve(rhs.as_ref())
        })
        .collect();
    let kernel = KernelConfig {
        gamma: factor.jitter(),
        ..*cfg
    };
    Ok(EstimatedOperators {
        a_hat,
        b_hat,
        gram_factor: factor,
        dataset: dataset.clone(),
        kernel,
        orientation,
        markov_enforced: false,
        kx_factor: OnceLock::new(),
    })
}

/// Projects onto `1ᵀÂ = 1ᵀ`, `1ᵀB̂_m = 0` by a uniform shift of every column.
pub fn enforce_markov(ops: &EstimatedOperators) -> EstimatedOperators {
    let n = ops.len();
    let shift = |m: &Mat<f64>, target: f64| {
        let mut out = m.clone();
        for j in 0..n {
            let sum: f64 = (0..n).map(|i| m[(i, j)]).sum();
            let delta = (target - sum) / n as f64;
            for i in 0..n {
                out[(i, j)] += delta;
            }
        }
        out
    };
    EstimatedOperators {
        a_hat: shift(&ops.a_hat, 1.0),
        b_hat: ops.b_hat.iter().map(|b| shift(b, 0.0)).collect(),
        markov_enforced: true,
        ..ops.clone()
    }
}

/// Henrici departure from normality `√(‖A‖_F² − Σ|λ_i|²) / ‖A‖_F`.
pub fn departure_from_normality(a: &Mat<f64>) -> Result<f64> {
    ensure(a.nrows() == a.ncols(), || "matrix must be square".into())?;
    let fro = frobenius_sq(a.as_ref());
    if fro == 0.0 {
        return Ok(0.0);
    }
    let eig = a.eigenvalues().map_err(|_| Error::Scoring)?;
    let spectral: f64 = eig.iter().map(|l| l.re * l.re + l.im * l.im).sum();
    Ok((fro - spectral).max(0.0).sqrt() / fro.sqrt())
}

/// Mean squared one-step embedding residual on held-out samples.
///
/// For each held-out `(x, u, y)` the point mass at `x` is embedded as
/// `w = (K_X + γI)⁻¹ k_X(x)`, pushed through `Â + Σ_m u_m B̂_m`, and the
/// resulting kernel section on the training points is compared with
/// `εk(X, y)`. The squared residual is divided by `N` and averaged over the
/// holdout.
pub fn validation_score(ops: &EstimatedOperators, holdout: &Dataset) -> Result<f64> {
    ensure(!holdout.is_empty(), || "empty holdout".into())?;
    ensure(
        holdout.n_x() == ops.dataset.n_x() && holdout.n_u() == ops.n_u(),
        || "holdout dimensions differ from the training data".into(),
    )?;
    let x = ops.dataset.x.as_ref();
    let n = ops.len();
    let h = holdout.len();
    let kx = kernel::gram(x, ops.kernel.sigma)?;
    let cross = kernel::cross_gram(x, holdout.x.as_ref(), ops.kernel.sigma)?;
    let w = ops.kx_factor()?.solve(cross.as_ref());

    let mut pushed = Mat::<f64>::zeros(n, h);
    matmul(pushed.as_mut(), Accum::Replace, ops.a_hat.as_ref(), w.as_ref(), 1.0, Par::Seq);
    for (m, b) in ops.b_hat.iter().enumerate() {
        let scaled = Mat::from_fn(n, h, |i, j| w[(i, j)] * holdout.u[(m, j)]);
        matmul(pushed.as_mut(), Accum::Add, b.as_ref(), scaled.as_ref(), 1.0, Par::Seq);
    }
    let mut section = kernel::cross_gram_diffused_between(x, holdout.y.as_ref(), &ops.kernel)?;
    matmul(section.as_mut(), Accum::Add, kx.as_ref(), pushed.as_ref(), -1.0, Par::Seq);
    Ok(frobenius_sq(section.as_ref()) / (n as f64 * h as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub sigma: f64,
    pub validation_error: f64,
    pub departure_from_normality: f64,
    /// Weighted sum of the min–max normalized scores; `NaN` for failed fits.
    pub combined: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionWeights {
    pub validation: f64,
    pub normality: f64,
}

impl Default for SelectionWeights {
    fn default() -> Self {
        Self {
            validation: 1.0,
            normality: 0.1,
        }
    }
}

/// Shuffled train/validation split, deterministic in `seed`.
pub fn split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    ensure(val_fraction > 0.0 && val_fraction < 1.0, || {
        format!("val_fraction must lie in (0, 1), got {val_fraction}")
    })?;
    let n = dataset.len();
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n.saturating_sub(2).max(1));
    ensure(n >= n_val + 2, || "dataset too small to split".into())?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val, train) = idx.split_at(n_val);
    Ok((dataset.select(train), dataset.select(val)))
}

fn normalize(values: &[f64]) -> Vec<f64> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

/// Scores every `σ` on a held-out split and returns the minimizer of the
/// weighted normalized score; ties go to the smaller `σ`.
pub fn model_select(
    dataset: &Dataset,
    base: &KernelConfig,
    sigma_grid: &[f64],
    weights: SelectionWeights,
    val_fraction: f64,
) -> Result<(f64, Vec<ModelScore>)> {
    ensure(!sigma_grid.is_empty(), || "sigma grid is empty".into())?;
    ensure(sigma_grid.iter().all(|s| s.is_finite() && *s > 0.0), || {
        "sigma grid entries must be positive".into()
    })?;
    let (train, holdout) = split(dataset, val_fraction, dataset.seed)?;
    let raw: Vec<Result<(f64, f64)>> = sigma_grid
        .par_iter()
        .map(|&sigma| {
            let cfg = KernelConfig { sigma, ..*base };
            let ops = fit_krr(&train, &cfg)?;
            let val = validation_score(&ops, &holdout)?;
            let dep = departure_from_normality(&ops.a_hat)?;
            Ok((val, dep))
        })
        .collect();
    if raw.iter().all(Result::is_err) {
        return Err(Error::Selection);
    }
    let pick = |f: fn(&(f64, f64)) -> f64| -> Vec<f64> {
        raw.iter().map(|r| r.as_ref().map_or(f64::NAN, f)).collect()
    };
    let val = pick(|r| r.0);
    let dep = pick(|r| r.1);
    let (nv, nd) = (normalize(&val), normalize(&dep));
    let scores: Vec<ModelScore> = sigma_grid
        .iter()
        .enumerate()
        .map(|(i, &sigma)| match &raw[i] {
            Ok(_) => ModelScore {
                sigma,
                validation_error: val[i],
                departure_from_normality: dep[i],
                combined: weights.validation * nv[i] + weights.normality * nd[i],
                error: None,
            },
            Err(e) => ModelScore {
                sigma,
                validation_error: f64::NAN,
                departure_from_normality: f64::NAN,
                combined: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let best = scores
        .iter()
        .filter(|s| s.error.is_none())
        .min_by(|a, b| {
            a.combined
                .partial_cmp(&b.combined)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.sigma.partial_cmp(&b.sigma).unwrap_or(std::cmp::Ordering::Equal))
        })
        .map(|s| s.sigma)
        .ok_or(Error::Selection)?;
    Ok((best, scores))
}
