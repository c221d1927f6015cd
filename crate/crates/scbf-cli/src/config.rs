//! Run configuration files: a single TOML document per run, resolved against
//! the example's defaults, with command-line flags taking precedence.

use std::path::Path;

use serde::Deserialize;

use scbf_core::experiments::{ExampleId, ExperimentConfig};

/// On-disk schema. `example`, `points`, `transitions`, `dt` and `seed` are
/// required; everything else falls back to the example's defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub example: String,
    pub points: usize,
    pub transitions: usize,
    pub dt: f64,
    pub seed: u64,
    /// Cubic-system noise gain (0.1 or 0.15); rejected for the pendulum.
    pub noise: Option<f64>,
    pub epochs: Option<usize>,
    pub trials: Option<usize>,
    pub margin: Option<f64>,
    pub learned_margin_extra: Option<f64>,
    pub horizon_steps: Option<usize>,
}

/// A configuration error carrying the offending field name; mapped to exit
/// code 2 by `main`.
#[derive(Debug)]
pub struct ConfigFileError(pub String);

impl std::fmt::Display for ConfigFileError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigFileError {}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigFileError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigFileError(format!("cannot read {}: {e}", path.display())))?;
    let file: RunFile = toml::from_str(&text)
        .map_err(|e| ConfigFileError(format!("{}: {e}", path.display())))?;
    resolve(file)
}

pub fn resolve(file: RunFile) -> Result<ExperimentConfig, ConfigFileError> {
    let example = ExampleId::parse(&file.example).map_err(|e| ConfigFileError(e.to_string()))?;
    let mut cfg = ExperimentConfig::new(example);
    cfg.point_count = file.points;
    cfg.transitions = file.transitions;
    cfg.dt = file.dt;
    cfg.seed = file.seed;
    match (example, file.noise) {
        (ExampleId::Pendulum, Some(_)) => {
            return Err(ConfigFileError(
                "noise: the pendulum's diffusion is fixed; remove the field".into(),
            ));
        }
        (ExampleId::Cubic2d, Some(noise)) => cfg.cubic_noise = noise,
        _ => {}
    }
    if let Some(epochs) = file.epochs {
        cfg.epochs = epochs;
    }
    if let Some(trials) = file.trials {
        cfg.trials = trials;
    }
    if let Some(margin) = file.margin {
        cfg.margin = margin;
    }
    if let Some(extra) = file.learned_margin_extra {
        cfg.learned_margin_extra = extra;
    }
    if let Some(h) = file.horizon_steps {
        cfg.horizon_steps = h;
    }
    cfg.validate().map_err(|e| ConfigFileError(e.to_string()))?;
    Ok(cfg)
}

/// Render the resolved configuration for the manifest.
pub fn describe(cfg: &ExperimentConfig) -> String {
    format!(
        "example={} noise={} points={} transitions={} dt={} epochs={} trials={} margin={} learned_margin_extra={} horizon_steps={} seed={}",
        cfg.example.label(),
        cfg.cubic_noise,
        cfg.point_count,
        cfg.transitions,
        cfg.dt,
        cfg.epochs,
        cfg.trials,
        cfg.margin,
        cfg.learned_margin_extra,
        cfg.horizon_steps,
        cfg.seed,
    )
}
