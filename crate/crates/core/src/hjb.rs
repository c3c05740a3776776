//! Fenchel conjugates of quadratic control penalties, the kernel HJB backward
//! recursion and feedback-law interpolation.
//!
//! The recursion runs entirely on the training points:
//!
//! ```text
//! v_H = 0
//! v_k = Âᵀ v_{k+1} + ℓ Δt + D(B̂ᵀ v_{k+1})
//! D(λ) = min_u  r(u) Δt + λᵀu
//! ```
//!
//! and the minimizer of `D` at each sample is the policy at that sample.

use std::sync::OnceLock;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::estimator::EstimatedOperators;
use crate::fpk::MeasureWeights;
use crate::linalg::{matvec_t, SpdFactor};

/// `r(u) = Σ_m R_m u_m²` with an optional box `𝕌`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPenalty {
    pub weights: Vec<f64>,
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl ControlPenalty {
    pub fn quadratic(weights: Vec<f64>) -> Self {
        Self {
            weights,
            bounds: None,
        }
    }

    pub fn with_box(weights: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let p = Self {
            weights,
            bounds: Some(bounds),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_u(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config(format!(
                "penalty weights must be positive, got {:?}",
                self.weights
            )));
        }
        if let Some(bounds) = &self.bounds {
            if bounds.len() != self.weights.len() {
                return Err(Error::Config("one box interval per control is required".into()));
            }
            for &(lo, hi) in bounds {
                if !(lo < hi && lo <= 0.0 && 0.0 <= hi) {
                    return Err(Error::Config(format!(
                        "control box [{lo}, {hi}] must satisfy lo < hi and contain 0"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `r(u)`.
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.weights.iter().zip(u).map(|(r, v)| r * v * v).sum()
    }

    fn clip(&self, m: usize, u: f64) -> f64 {
        match &self.bounds {
            Some(b) => u.clamp(b[m].0, b[m].1),
            None => u,
        }
    }

    /// Clips `u` into the box, if any.
    pub fn project(&self, u: &mut [f64]) {
        for (m, v) in u.iter_mut().enumerate() {
            *v = self.clip(m, *v);
        }
    }
}

/// `D(λ) = min_u r(u)Δt + λᵀu`, returning the value and the minimizer.
///
/// The penalty is separable, so each coordinate minimizer is the
/// unconstrained `−λ_m / (2 R_m Δt)` clipped into the box.
pub fn fenchel_conjugate(lambda: &[f64], penalty: &ControlPenalty, dt: f64) -> (f64, Vec<f64>) {
    let mut u = vec![0.0; lambda.len()];
    let value = conjugate_into(lambda, penalty, dt, &mut u);
    (value, u)
}

fn conjugate_into(lambda: &[f64], penalty: &ControlPenalty, dt: f64, u: &mut [f64]) -> f64 {
    let mut value = 0.0;
    for (m, (&l, um)) in lambda.iter().zip(u.iter_mut()).enumerate() {
        let r = penalty.weights[m];
        *um = penalty.clip(m, -l / (2.0 * r * dt));
        value += r * *um * *um * dt + l * *um;
    }
    value
}

/// Backward value iterates and the per-step policy on the training points.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolution {
    /// `(H+1) × N`; row `k` is `v_k`, row `H` is zero.
    pub values: Mat<f64>,
    /// `H × (n_u N)`; entry `(k, m N + i)` is control `m` at sample `i`.
    pub policy: Mat<f64>,
    pub horizon: usize,
    pub dt: f64,
    pub n_u: usize,
    pub converged_at: Option<usize>,
    pub penalty: ControlPenalty,
}

impl ValueSolution {
    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn value(&self, k: usize) -> Vec<f64> {
        (0..self.n_samples()).map(|i| self.values[(k, i)]).collect()
    }

    /// Control `m` at step `k` for every sample.
    pub fn policy_component(&self, k: usize, m: usize) -> Vec<f64> {
        let n = self.n_samples();
        (0..n).map(|i| self.policy[(k, m * n + i)]).collect()
    }

    /// Control vector at step `k`, sample `i`.
    pub fn policy_at(&self, k: usize, i: usize) -> Vec<f64> {
        let n = self.n_samples();
        (0..self.n_u).map(|m| self.policy[(k, m * n + i)]).collect()
    }

    /// Policy at step `k` as an `n_u × N` matrix.
    pub fn policy_matrix(&self, k: usize) -> Mat<f64> {
        let n = self.n_samples();
        Mat::from_fn(self.n_u, n, |m, i| self.policy[(k, m * n + i)])
    }

    /// Step whose policy is read off as the stationary law: the first row,
    /// which equals the converged policy once the stopping rule fired.
    pub fn stationary_step(&self) -> usize {
        0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.values.ncols();
        let h = self.horizon;
        if self.values.nrows() != h + 1 || self.policy.nrows() != h || self.policy.ncols() != self.n_u * n {
            return Err(Error::Invariant("value/policy table shapes disagree with H, N, n_u".into()));
        }
        if (0..n).any(|i| self.values[(h, i)] != 0.0) {
            return Err(Error::Invariant("terminal value v_H is not zero".into()));
        }
        if self.penalty.n_u() != self.n_u {
            return Err(Error::Invariant("penalty dimension differs from n_u".into()));
        }
        if let Some(b) = &self.penalty.bounds {
            for k in 0..h {
                for m in 0..self.n_u {
                    for i in 0..n {
                        let u = self.policy[(k, m * n + i)];
                        if u < b[m].0 || u > b[m].1 {
                            return Err(Error::Invariant(format!(
                                "policy entry ({k}, {m}, {i}) = {u} outside the control box"
                            )));
                        }
                    }
                }
            }
        }
        if let Some(c) = self.converged_at {
            if c >= h {
                return Err(Error::Invariant("converged_at beyond the horizon".into()));
            }
        }
        Ok(())
    }
}

/// Runs the KHJB recursion for `horizon` steps.
///
/// `stage_cost` is the running-cost rate `ℓ(x^(i))`; it is multiplied by `Δt`
/// here. With `stop_tol > 0` the first step `k` whose policy differs from step
/// `k+1` by less than `stop_tol` in sup norm is recorded in `converged_at`,
/// and the remaining steps keep that policy while the values continue.
pub fn khjb_recursion(
    ops: &EstimatedOperators,
    stage_cost: &[f64],
    penalty: &ControlPenalty,
    horizon: usize,
    stop_tol: f64,
) -> Result<ValueSolution> {
    let n = ops.len();
    let n_u = ops.n_u();
    let dt = ops.kernel.dt;
    ensure(stage_cost.len() == n, || {
        format!("cost has length {} but the model has {n} samples", stage_cost.len())
    })?;
    ensure(horizon >= 1, || "horizon H must be >= 1".into())?;
    ensure(stop_tol >= 0.0, || "stop_tol must be >= 0".into())?;
    penalty.validate()?;
    ensure(penalty.n_u() == n_u, || {
        format!("penalty has {} weights but the model has {n_u} controls", penalty.n_u())
    })?;

    let mut values = Mat::<f64>::zeros(horizon + 1, n);
    let mut policy = Mat::<f64>::zeros(horizon, n_u * n);
    let running: Vec<f64> = stage_cost.iter().map(|c| c * dt).collect();

    let mut next = vec![0.0; n];
    let mut drift = vec![0.0; n];
    let mut lambdas = vec![vec![0.0; n]; n_u];
    let mut current = vec![0.0; n];
    let mut lam = vec![0.0; n_u];
    let mut u = vec![0.0; n_u];
    let mut prev_policy: Option<Vec<f64>> = None;
    let mut frozen: Option<Vec<f64>> = None;
    let mut converged_at = None;

    for k in (0..horizon).rev() {
        matvec_t(ops.a_hat.as_ref(), &next, &mut drift);
        for (b, l) in ops.b_hat.iter().zip(lambdas.iter_mut()) {
            matvec_t(b.as_ref(), &next, l);
        }
        let mut row = vec![0.0; n_u * n];
        for i in 0..n {
            for m in 0..n_u {
                lam[m] = lambdas[m][i];
            }
            let d = match &frozen {
                None => conjugate_into(&lam, penalty, dt, &mut u),
                Some(p) => {
                    for m in 0..n_u {
                        u[m] = p[m * n + i];
                    }
                    penalty.eval(&u) * dt + lam.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
                }
            };
            current[i] = drift[i] + running[i] + d;
            for m in 0..n_u {
                row[m * n + i] = u[m];
            }
        }
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        for i in 0..n {
            values[(k, i)] = current[i];
        }
        for (j, v) in row.iter().enumerate() {
            policy[(k, j)] = *v;
        }
        if stop_tol > 0.0 && frozen.is_none() {
            if let Some(prev) = &prev_policy {
                let change = prev.iter().zip(&row).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if change < stop_tol {
                    log::debug!("policy converged at step {k} (change {change:e})");
                    converged_at = Some(k);
                    frozen = Some(row.clone());
                }
            }
            prev_policy = Some(row);
        }
        std::mem::swap(&mut next, &mut current);
    }

    Ok(ValueSolution {
        values,
        policy,
        horizon,
        dt,
        n_u,
        converged_at,
        penalty: penalty.clone(),
    })
}

/// `J_H(z₀) = v₀ᵀ z₀`.
pub fn value_functional(v0: &[f64], z0: &MeasureWeights) -> Result<f64> {
    ensure(v0.len() == z0.z.len(), || {
        format!("v0 has length {} but z0 has {}", v0.len(), z0.z.len())
    })?;
    Ok(v0.iter().zip(&z0.z).map(|(a, b)| a * b).sum())
}

/// Out-of-sample feedback law `π̂(kΔt, x) = k_{xX} (K_X + γI)⁻¹ π_k(X)`.
///
/// The coefficient matrix of each step is computed on first use and cached.
pub struct PolicyInterpolator<'a> {
    ops: &'a EstimatedOperators,
    sol: &'a ValueSolution,
    coefficients: Vec<OnceLock<Mat<f64>>>,
}

impl<'a> PolicyInterpolator<'a> {
    pub fn new(ops: &'a EstimatedOperators, sol: &'a ValueSolution) -> Result<Self> {
        ensure(sol.n_samples() == ops.len() && sol.n_u == ops.n_u(), || {
            "value solution does not belong to these operators".into()
        })?;
        Ok(Self {
            ops,
            sol,
            coefficients: (0..sol.horizon).map(|_| OnceLock::new()).collect(),
        })
    }

    fn coefficients(&self, k: usize, factor: &SpdFactor) -> &Mat<f64> {
        self.coefficients[k].get_or_init(|| {
            // N × n_u right-hand side.
            let rhs = self.sol.policy_matrix(k).transpose().to_owned();
            factor.solve(rhs.as_ref())
        })
    }

    /// Control at `query` for step `k`, clipped into the penalty box.
    pub fn eval(&self, query: &[f64], k: usize) -> Result<Vec<f64>> {
        ensure(k < self.sol.horizon, || {
            format!("step {k} is outside the horizon {}", self.sol.horizon)
        })?;
        let factor = self.ops.kx_factor()?;
        let coef = self.coefficients(k, factor);
        let row = crate::kernel::cross_vector(query, self.ops.dataset.x.as_ref(), self.ops.kernel.sigma)?;
        let mut u: Vec<f64> = (0..self.sol.n_u)
            .map(|m| row.iter().enumerate().map(|(i, r)| r * coef[(i, m)]).sum())
            .collect();
        self.sol.penalty.project(&mut u);
        Ok(u)
    }

    /// Stationary law at `query`.
    pub fn stationary(&self, query: &[f64]) -> Result<Vec<f64>> {
        self.eval(query, self.sol.stationary_step())
    }
}

/// One-off evaluation of the interpolated policy; prefer
/// [`PolicyInterpolator`] for many queries.
pub fn policy_interpolate(
    query: &[f64],
    sol: &ValueSolution,
    ops: &EstimatedOperators,
    k: usize,
) -> Result<Vec<f64>> {
    PolicyInterpolator::new(ops, sol)?.eval(query, k)
}
