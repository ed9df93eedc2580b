//! Error types shared across the workspace.
//!
//! Exit-code mapping lives in the CLI: config problems are exit 1, training
//! divergence exit 2, data starvation exit 3.

use thiserror::Error;

/// Particle-filter failures.
#[derive(Debug, Clone, Error)]
pub enum BeliefError {
    /// Every particle received zero observation weight, even after the
    /// tempered retry.
    #[error("particle depletion: all observation weights vanished (max density {max_density:.3e})")]
    Depletion { max_density: f64 },

    /// Belief summaries need at least two particles for the sample std.
    #[error("belief requires at least 2 particles, got {0}")]
    TooFewParticles(usize),
}

/// Training failures.
#[derive(Debug, Clone, Error)]
pub enum TrainError {
    /// A non-finite loss or gradient was produced; `layer` names the first
    /// offending parameter block.
    #[error("divergence: non-finite {quantity} in {layer}")]
    Divergence { layer: String, quantity: &'static str },

    /// The training set was empty.
    #[error("no training samples")]
    EmptyDataset,
}

/// Episode-level failure, wrapping the step at which the belief update died.
#[derive(Debug, Clone, Error)]
#[error("episode failed at step {step}: {source}")]
pub struct EpisodeError {
    pub step: usize,
    #[source]
    pub source: BeliefError,
}

/// Policy-iteration failures.
#[derive(Debug, Error)]
pub enum SelfPlayError {
    /// More than `max_drop_fraction` of an iteration's episodes failed.
    #[error("data starvation: {dropped}/{total} episodes failed (limit {limit_percent:.0}%)")]
    Starvation {
        dropped: usize,
        total: usize,
        limit_percent: f64,
    },

    #[error(transparent)]
    Train(#[from] TrainError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Config-file problems: missing sections, unknown keys, out-of-range values,
/// or a file that does not match the requested environment.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("missing config section [{0}]")]
    MissingSection(&'static str),

    #[error("invalid config value: {0}")]
    Invalid(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}
