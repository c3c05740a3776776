use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown system `{0}` (known: s1, s2, s3, s4, vdp)")]
    UnknownSystem(String),

    #[error("integration produced a non-finite state at substep {step}")]
    Integration { step: usize },

    #[error(
        "Gram matrix (K_U + {gamma:e} I) is not positive definite: smallest pivot {min_pivot:e} \
         at index {index}; increase gamma (jitter) or remove duplicated samples"
    )]
    NotPositiveDefinite {
        gamma: f64,
        index: usize,
        min_pivot: f64,
    },

    #[error(
        "value recursion diverged at step {step}: non-finite value; the learned operator is \
         likely unstable (try enforce_markov, a larger gamma or a different sigma)"
    )]
    Divergence { step: usize },

    #[error("propagation produced non-finite weights at step {step}")]
    Propagation { step: usize },

    #[error("eigenvalue computation did not converge")]
    Scoring,

    #[error("model selection failed: every candidate sigma failed to fit")]
    Selection,

    #[error("rollout left the admissible region at t = {time}: |x| = {norm:e}")]
    Rollout { time: f64, norm: f64 },

    #[error("riccati oracle: {0}")]
    Oracle(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed artifact header: {0}")]
    Header(String),

    #[error("unsupported artifact version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("payload checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("artifact kind mismatch: expected {expected}, found {found}")]
    Kind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invariant violated on load: {0}")]
    Invariant(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the user's configuration or inputs rather
    /// than by a numerical failure during a run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Input(_) | Error::Config(_) | Error::UnknownSystem(_) | Error::Parse(_)
        )
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Input(msg()))
    }
}
