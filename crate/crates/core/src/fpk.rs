//! Forward propagation of measures through the learned operators.
//!
//! A measure is represented by coefficients `z` over the training basis,
//! `p ≈ Σ_i z_i δ_{x^(i)}`; one step under a feedback law `π` is
//! `z' = Â z + Σ_m B̂_m (π_m(X) ⊙ z)`.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::estimator::{factor_escalating, EstimatedOperators};
use crate::kernel;
use crate::linalg::matvec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureWeights {
    pub z: Vec<f64>,
    pub step: usize,
}

impl MeasureWeights {
    pub fn mass(&self) -> f64 {
        self.z.iter().sum()
    }
}

/// Point set over which the initial measure is embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedBasis {
    /// Training inputs `X`, the basis `Â` and `B̂` act on.
    #[default]
    X,
    /// Successor states `Y`.
    Y,
}

impl std::str::FromStr for EmbedBasis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(EmbedBasis::X),
            "y" | "Y" => Ok(EmbedBasis::Y),
            other => Err(Error::Config(format!("embed basis must be x or y, got `{other}`"))),
        }
    }
}

/// Embeds the empirical measure of the columns of `x0`:
/// `(K_B + γI) z₀ = K_{B X₀} 1 / N₀` with `B = X` by default.
pub fn embed_initial(ops: &EstimatedOperators, x0: MatRef<'_, f64>) -> Result<MeasureWeights> {
    embed_initial_in(ops, x0, EmbedBasis::X)
}

pub fn embed_initial_in(
    ops: &EstimatedOperators,
    x0: MatRef<'_, f64>,
    basis: EmbedBasis,
) -> Result<MeasureWeights> {
    ensure(x0.ncols() >= 1, || "initial sample set is empty".into())?;
    ensure(x0.nrows() == ops.dataset.n_x(), || {
        format!("initial samples have dimension {}, expected {}", x0.nrows(), ops.dataset.n_x())
    })?;
    let sigma = ops.kernel.sigma;
    let points = match basis {
        EmbedBasis::X => ops.dataset.x.as_ref(),
        EmbedBasis::Y => ops.dataset.y.as_ref(),
    };
    let cross = kernel::cross_gram(points, x0, sigma)?;
    let n0 = x0.ncols() as f64;
    let rhs: Vec<f64> = (0..cross.nrows())
        .map(|i| (0..cross.ncols()).map(|j| cross[(i, j)]).sum::<f64>() / n0)
        .collect();
    let z = match basis {
        EmbedBasis::X => ops.kx_factor()?.solve_vec(&rhs),
        EmbedBasis::Y => {
            let ky = kernel::gram(points, sigma)?;
            factor_escalating(&ky, ops.kernel.gamma)?.solve_vec(&rhs)
        }
    };
    Ok(MeasureWeights { z, step: 0 })
}

/// One step of the embedded forward equation under `policy_at_x` (`n_u × N`).
pub fn propagate(
    ops: &EstimatedOperators,
    z: &MeasureWeights,
    policy_at_x: MatRef<'_, f64>,
) -> Result<MeasureWeights> {
    let n = ops.len();
    ensure(z.z.len() == n, || format!("weights have length {}, expected {n}", z.z.len()))?;
    ensure(policy_at_x.shape() == (ops.n_u(), n), || {
        format!("policy is {:?}, expected ({}, {n})", policy_at_x.shape(), ops.n_u())
    })?;
    let mut out = vec![0.0; n];
    matvec(ops.a_hat.as_ref(), &z.z, &mut out);
    let mut scaled = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for (m, b) in ops.b_hat.iter().enumerate() {
        let mut any = false;
        for i in 0..n {
            scaled[i] = policy_at_x[(m, i)] * z.z[i];
            any |= scaled[i] != 0.0;
        }
        if !any {
            continue;
        }
        matvec(b.as_ref(), &scaled, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += t;
        }
    }
    let step = z.step + 1;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Propagation { step });
    }
    Ok(MeasureWeights { z: out, step })
}

/// `zᵀψ`, the kernel-quadrature estimate of `E[ψ]`.
pub fn observable_forecast(z: &MeasureWeights, psi_values: &[f64]) -> Result<f64> {
    ensure(z.z.len() == psi_values.len(), || {
        format!("weights have length {} but psi has {}", z.z.len(), psi_values.len())
    })?;
    Ok(z.z.iter().zip(psi_values).map(|(a, b)| a * b).sum())
}

/// Feedback law used during propagation.
#[derive(Debug, Clone)]
pub enum PropagationPolicy {
    Zero,
    /// The controls recorded in the training data.
    Training,
    /// A fixed table of per-sample controls (`n_u × N`), e.g. a learned
    /// stationary policy.
    Table(Mat<f64>),
}

impl PropagationPolicy {
    fn table(&self, ops: &EstimatedOperators) -> Mat<f64> {
        match self {
            PropagationPolicy::Zero => Mat::zeros(ops.n_u(), ops.len()),
            PropagationPolicy::Training => ops.dataset.u.clone(),
            PropagationPolicy::Table(t) => t.clone(),
        }
    }
}

/// Propagates `z0` for `steps` steps, returning every iterate including `z0`.
pub fn trajectory(
    ops: &EstimatedOperators,
    z0: &MeasureWeights,
    policy: &PropagationPolicy,
    steps: usize,
) -> Result<Vec<MeasureWeights>> {
    let table = policy.table(ops);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(z0.clone());
    for _ in 0..steps {
        let next = propagate(ops, out.last().expect("non-empty"), table.as_ref())?;
        out.push(next);
    }
    Ok(out)
}

/// `ψ` evaluated on the basis points used for read-out.
pub fn psi_on_basis(
    ops: &EstimatedOperators,
    basis: EmbedBasis,
    psi: impl Fn(&[f64]) -> f64,
) -> Vec<f64> {
    let pts = match basis {
        EmbedBasis::X => &ops.dataset.x,
        EmbedBasis::Y => &ops.dataset.y,
    };
    (0..pts.ncols())
        .map(|j| psi(&crate::linalg::column(pts.as_ref(), j)))
        .collect()
}
