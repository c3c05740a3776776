//! Data-driven stochastic optimal control for control-affine diffusions.
//!
//! From snapshot data `(x, u, x₊)` of an SDE
//!
//! ```text
//! dX = (f(X) + G(X) u) dt + √(2ε) dW
//! ```
//!
//! the crate learns kernel-mean-embedding transition operators `Â`, `B̂` by
//! kernel ridge regression, runs the kernel Hamilton–Jacobi–Bellman backward
//! recursion over the training points to obtain a feedback law, and pushes
//! distributions forward with the same operators.
//!
//! | module        | contents                                                      |
//! |---------------|---------------------------------------------------------------|
//! | [`kernel`]    | RBF / diffused kernels, `K_X`, `K_U`, `εK_XY`                 |
//! | [`systems`]   | benchmark dynamics, Euler–Maruyama, dataset generation         |
//! | [`estimator`] | `Â`, `B̂`, Markov projection, model selection                  |
//! | [`hjb`]       | Fenchel conjugate, value recursion, policy interpolation      |
//! | [`fpk`]       | measure embedding, propagation, observable forecasts          |
//! | [`bench`]     | RMSE benchmarks, rollouts, Riccati reference, sweeps          |
//! | [`store`]     | binary artifacts with checksums, CSV tables                   |
//! | [`config`]    | TOML run configuration                                        |
//!
//! ```
//! use kernel_hjb::{bench, estimator, hjb, systems};
//!
//! let sys = systems::registry("s1")?;
//! let spec = systems::DatasetSpec { n: 200, seed: 3, ..systems::DatasetSpec::for_system(&sys) };
//! let data = systems::generate_dataset(&sys, &spec)?;
//! let cfg = kernel_hjb::KernelConfig { sigma: 1.2, ..Default::default() };
//! let ops = estimator::fit_krr(&data, &cfg)?;
//! let sol = hjb::khjb_recursion(&ops, &data.stage_cost(), &sys.penalty, 300, 0.0)?;
//! let gain = bench::least_squares_gain(&data, &sol)?;
//! assert!((gain + 2f64.sqrt()).abs() < 0.3);
//! # Ok::<(), kernel_hjb::Error>(())
//! ```

pub mod bench;
pub mod config;
pub mod error;
pub mod estimator;
pub mod fpk;
pub mod hjb;
pub mod kernel;
pub mod linalg;
pub mod store;
pub mod systems;

pub use error::{Error, Result};
pub use estimator::{fit_krr, BlockOrientation, EstimatedOperators};
pub use fpk::MeasureWeights;
pub use hjb::{ControlPenalty, ValueSolution};
pub use kernel::{DiffusedMode, KernelConfig};
pub use systems::{ControlAffineSystem, Dataset};
