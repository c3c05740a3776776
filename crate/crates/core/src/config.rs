//! Run configuration, read from TOML with dotted keys:
//!
//! ```toml
//! system = "s1"
//! seed = 7
//! kernel.sigma = 1.2
//! hjb.horizon = 500
//! ```
//!
//! Unset values fall back to the per-system benchmark settings. Unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::BenchmarkSpec;
use crate::error::{Error, Result};
use crate::estimator::{BlockOrientation, SelectionWeights};
use crate::fpk::EmbedBasis;
use crate::hjb::ControlPenalty;
use crate::kernel::DiffusedMode;
use crate::systems::{self, Sampler, Successors};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n: Option<usize>,
    pub substeps: Option<usize>,
    pub sampler: Option<Sampler>,
    pub successors: Option<Successors>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub dt: Option<f64>,
    pub gamma: Option<f64>,
    pub diffused_mode: Option<DiffusedMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub markov_enforce: bool,
    pub b_block_orientation: BlockOrientation,
    pub sigma_grid: Vec<f64>,
    pub val_fraction: f64,
    pub w_validation: f64,
    pub w_normality: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let w = SelectionWeights::default();
        Self {
            markov_enforce: false,
            b_block_orientation: BlockOrientation::Row,
            sigma_grid: Vec::new(),
            val_fraction: 0.2,
            w_validation: w.validation,
            w_normality: w.normality,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct HjbSection {
    pub weights: Option<Vec<f64>>,
    pub box_lo: Option<Vec<f64>>,
    pub box_hi: Option<Vec<f64>>,
    pub horizon: Option<usize>,
    pub stop_tol: Option<f64>,
    pub export_stride: usize,
    pub query_grid: Option<PathBuf>,
}


#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictPolicy {
    #[default]
    Zero,
    Training,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    pub policy: PredictPolicy,
    pub steps: usize,
    pub x0: Option<Vec<f64>>,
    pub initial: Option<PathBuf>,
    pub observable: String,
    pub embed_basis: EmbedBasis,
    pub dump_weights: bool,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self {
            policy: PredictPolicy::Zero,
            steps: 50,
            x0: None,
            initial: None,
            observable: "x1^2".into(),
            embed_basis: EmbedBasis::X,
            dump_weights: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub reps: usize,
    pub n_grid: Vec<usize>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            reps: 10,
            n_grid: vec![100, 250, 500, 1000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: String,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub data: DataSection,
    pub kernel: KernelSection,
    pub estimator: EstimatorSection,
    pub hjb: HjbSection,
    pub predict: PredictSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: "s1".into(),
            dataset: None,
            model: None,
            seed: 0,
            out: PathBuf::from("out"),
            threads: None,
            data: DataSection::default(),
            kernel: KernelSection::default(),
            estimator: EstimatorSection::default(),
            hjb: HjbSection::default(),
            predict: PredictSection::default(),
            bench: BenchSection::default(),
        }
    }
}

/// Every configuration key with its default and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("system", "s1", "benchmark system: s1, s2, s3, s4, vdp"),
    ("dataset", "<out>/dataset.csv", "dataset CSV read by identify"),
    ("model", "<out>/model.khjb", "model artifact read by control/predict"),
    ("seed", "0", "root seed of every random stream"),
    ("out", "out", "output directory"),
    ("threads", "all cores", "worker threads"),
    ("data.n", "per system (1000; s4 400; vdp 2500)", "number of samples N"),
    ("data.substeps", "10", "Euler-Maruyama substeps per dt"),
    ("data.sampler", "uniform_iid (vdp: grid)", "uniform_iid | grid"),
    ("data.successors", "deterministic", "deterministic | sampled successor states"),
    ("kernel.sigma", "per system (1.2, 1.8, 2.0, 1.0, 20)", "RBF length scale"),
    ("kernel.epsilon", "0.02", "diffusion parameter"),
    ("kernel.dt", "per system (1e-2; s2, s3 1e-3)", "sampling time"),
    ("kernel.gamma", "1e-8 (vdp 1e-4)", "Tikhonov regularization"),
    ("kernel.diffused_mode", "paper_printed", "paper_printed | exact_expectation"),
    ("estimator.markov_enforce", "false", "project onto column-sum constraints"),
    ("estimator.b_block_orientation", "row", "row | column control scaling"),
    ("estimator.sigma_grid", "[]", "sigma candidates for model selection"),
    ("estimator.val_fraction", "0.2", "held-out fraction for model selection"),
    ("estimator.w_validation", "1.0", "weight of the validation score"),
    ("estimator.w_normality", "0.1", "weight of the departure from normality"),
    ("hjb.weights", "per system (1; vdp 0.5)", "diagonal control penalty R"),
    ("hjb.box_lo", "none", "lower control bounds"),
    ("hjb.box_hi", "none", "upper control bounds"),
    ("hjb.horizon", "per system (500; s2, s3 5000; vdp 3000)", "recursion steps H"),
    ("hjb.stop_tol", "0 (vdp 1e-6)", "stationary-policy stopping tolerance"),
    ("hjb.export_stride", "0", "export every stride-th step (0: step 0 only)"),
    ("hjb.query_grid", "none", "CSV of query states for the learned policy"),
    ("predict.policy", "zero", "zero | training | learned"),
    ("predict.steps", "50", "propagation steps"),
    ("predict.x0", "domain center", "point-mass initial state"),
    ("predict.initial", "none", "CSV of initial samples (overrides x0)"),
    ("predict.observable", "x1^2", "one | x<i> | x<i>^2 | norm2"),
    ("predict.embed_basis", "x", "x | y basis for embedding and read-out"),
    ("predict.dump_weights", "false", "also write the weight dump"),
    ("bench.reps", "10", "repetitions per benchmark"),
    ("bench.n_grid", "[100, 250, 500, 1000]", "sample counts of the sweep"),
];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Benchmark settings of `system` with every configured override applied.
    pub fn bench_spec(&self) -> Result<BenchmarkSpec> {
        let mut spec = BenchmarkSpec::defaults(&self.system)?;
        let d = &self.data;
        if let Some(n) = d.n {
            spec.data.n = n;
        }
        if let Some(s) = d.substeps {
            spec.data.substeps = s;
        }
        if let Some(s) = d.sampler {
            spec.data.sampler = s;
        }
        if let Some(s) = d.successors {
            spec.data.successors = s;
        }
        let k = &self.kernel;
        if let Some(v) = k.sigma {
            spec.kernel.sigma = v;
        }
        if let Some(v) = k.epsilon {
            spec.kernel.epsilon = v;
            spec.data.epsilon = v;
        }
        if let Some(v) = k.dt {
            spec.kernel.dt = v;
            spec.data.dt = v;
        }
        if let Some(v) = k.gamma {
            spec.kernel.gamma = v;
        }
        if let Some(v) = k.diffused_mode {
            spec.kernel.diffused_mode = v;
        }
        if let Some(h) = self.hjb.horizon {
            spec.horizon = h;
        }
        if let Some(t) = self.hjb.stop_tol {
            spec.stop_tol = t;
        }
        spec.markov = self.estimator.markov_enforce;
        spec.orientation = self.estimator.b_block_orientation;
        spec.validate()?;
        if spec.data.n == 0 {
            return Err(Error::Config("data.n must be >= 1".into()));
        }
        if spec.data.substeps == 0 {
            return Err(Error::Config("data.substeps must be >= 1".into()));
        }
        Ok(spec)
    }

    /// Control penalty of `system` with configured overrides.
    pub fn penalty(&self) -> Result<ControlPenalty> {
        let sys = systems::registry(&self.system)?;
        let weights = self.hjb.weights.clone().unwrap_or(sys.penalty.weights);
        let penalty = match (&self.hjb.box_lo, &self.hjb.box_hi) {
            (None, None) => ControlPenalty::quadratic(weights),
            (Some(lo), Some(hi)) if lo.len() == hi.len() => ControlPenalty {
                weights,
                bounds: Some(lo.iter().copied().zip(hi.iter().copied()).collect()),
            },
            _ => {
                return Err(Error::Config(
                    "hjb.box_lo and hjb.box_hi must both be given with equal lengths".into(),
                ))
            }
        };
        penalty.validate()?;
        Ok(penalty)
    }

    pub fn selection_weights(&self) -> SelectionWeights {
        SelectionWeights {
            validation: self.estimator.w_validation,
            normality: self.estimator.w_normality,
        }
    }
}

/// Observable `ψ` named in the configuration.
pub fn parse_observable(name: &str, n_x: usize) -> Result<Box<dyn Fn(&[f64]) -> f64 + Send + Sync>> {
    let bad = || {
        Error::Config(format!(
            "observable must be one, x<i>, x<i>^2 or norm2 with i <= {n_x}, got `{name}`"
        ))
    };
    match name {
        "one" => return Ok(Box::new(|_| 1.0)),
        "norm2" => return Ok(Box::new(|x| x.iter().map(|v| v * v).sum())),
        _ => {}
    }
    let rest = name.strip_prefix('x').ok_or_else(bad)?;
    let (index, squared) = match rest.strip_suffix("^2") {
        Some(i) => (i, true),
        None => (rest, false),
    };
    let i: usize = index.parse().map_err(|_| bad())?;
    if i == 0 || i > n_x {
        return Err(bad());
    }
    let i = i - 1;
    Ok(if squared {
        Box::new(move |x| x[i] * x[i])
    } else {
        Box::new(move |x| x[i])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
        if let toml::Value::Table(t) = v {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                if matches!(v, toml::Value::Table(_)) {
                    flatten(&key, v, out);
                } else {
                    out.push(key);
                }
            }
        }
    }

    #[test]
    fn key_table_matches_fields() {
        // Options serialize only when set, so fill every optional field.
        let text = r#"
            dataset = "d.csv"
            model = "m.khjb"
            threads = 1
            data.n = 10
            data.substeps = 2
            data.sampler = "grid"
            data.successors = "sampled"
            kernel.sigma = 1.0
            kernel.epsilon = 0.0
            kernel.dt = 0.1
            kernel.gamma = 0.0
            kernel.diffused_mode = "exact_expectation"
            hjb.weights = [1.0]
            hjb.box_lo = [-1.0]
            hjb.box_hi = [1.0]
            hjb.horizon = 3
            hjb.stop_tol = 0.0
            hjb.query_grid = "q.csv"
            predict.x0 = [0.0]
            predict.initial = "i.csv"
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        let value = toml::Value::try_from(&cfg).unwrap();
        let mut keys = Vec::new();
        flatten("", &value, &mut keys);
        let mut documented: Vec<String> = KEYS.iter().map(|k| k.0.to_string()).collect();
        keys.sort();
        documented.sort();
        assert_eq!(keys, documented);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("kernel.sigmaa = 1.0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("colour = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn defaults_follow_the_system() {
        let cfg = RunConfig::default();
        let spec = cfg.bench_spec().unwrap();
        assert_eq!((spec.kernel.gamma, spec.kernel.epsilon, spec.kernel.sigma), (1e-8, 0.02, 1.2));
        let vdp = RunConfig { system: "vdp".into(), ..RunConfig::default() };
        let spec = vdp.bench_spec().unwrap();
        assert_eq!((spec.data.n, spec.data.sampler, spec.kernel.sigma), (2500, Sampler::Grid, 20.0));
        let over = RunConfig::from_toml("system = \"s4\"\nkernel.dt = 0.05\nhjb.horizon = 7").unwrap();
        let spec = over.bench_spec().unwrap();
        assert_eq!((spec.data.dt, spec.kernel.dt, spec.horizon), (0.05, 0.05, 7));
    }

    #[test]
    fn observables() {
        assert_eq!(parse_observable("one", 2).unwrap()(&[3.0, 4.0]), 1.0);
        assert_eq!(parse_observable("x2", 2).unwrap()(&[3.0, 4.0]), 4.0);
        assert_eq!(parse_observable("x1^2", 2).unwrap()(&[3.0, 4.0]), 9.0);
        assert_eq!(parse_observable("norm2", 2).unwrap()(&[3.0, 4.0]), 25.0);
        assert!(parse_observable("x3", 2).is_err());
        assert!(parse_observable("y", 2).is_err());
    }

    #[test]
    fn penalty_overrides() {
        let cfg = RunConfig::from_toml("hjb.box_lo = [-1.0]\nhjb.box_hi = [1.0]").unwrap();
        assert_eq!(cfg.penalty().unwrap().bounds, Some(vec![(-1.0, 1.0)]));
        let bad = RunConfig::from_toml("hjb.box_lo = [-1.0]").unwrap();
        assert!(bad.penalty().is_err());
    }
}
