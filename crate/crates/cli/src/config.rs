//! Run configuration: a versioned JSON document, schema-validated before
//! any computation; unknown keys are rejected.

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use serde_json::Value;

pub const RUN_CONFIG_SCHEMA: &str = "kes/run-config/1";
pub const BENCH_CONFIG_SCHEMA: &str = "kes/bench-config/1";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub seed: u64,
    pub space: SpaceConfig,
    pub target: TargetConfig,
    pub kernel: KernelConfig,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Euclidean dynamics order (1 or 2); groups use their kinematics.
    #[serde(default = "default_order")]
    pub dynamics_order: usize,
    #[serde(default)]
    pub weights: WeightsConfig,
    /// Domain barrier (Euclidean only; groups never use one).
    #[serde(default = "default_true")]
    pub barrier: bool,
    /// Optimize against the bandwidth-smoothed target (Euclidean only);
    /// keeps the finite-bandwidth minimizer from sharpening the target.
    #[serde(default = "default_true")]
    pub smooth_target: bool,
    /// Euclidean: task-dim (order 2 starts at rest) or full state-dim
    /// vector. Groups: 16 row-major homogeneous entries (SE3) or 9
    /// row-major rotation entries (SO3).
    pub initial_state: Vec<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    pub outputs: OutputsConfig,
}

fn default_horizon() -> usize {
    200
}
fn default_dt() -> f64 {
    0.1
}
fn default_order() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_max_iters() -> usize {
    100
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum SpaceConfig {
    Euclidean { lower: Vec<f64>, upper: Vec<f64> },
    So3,
    Se3,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    #[serde(default)]
    pub file: Option<String>,
    #[serde(default)]
    pub inline: Option<Value>,
}

impl TargetConfig {
    /// The mixture JSON text, from the file or the inline document.
    pub fn load_text(&self) -> Result<String> {
        match (&self.file, &self.inline) {
            (Some(path), None) => {
                std::fs::read_to_string(path).with_context(|| format!("reading target {path}"))
            }
            (None, Some(value)) => Ok(value.to_string()),
            _ => bail!("target needs exactly one of `file` or `inline`"),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Scalar (isotropic) or per-dimension variance vector.
    #[serde(default)]
    pub theta: Option<Value>,
    /// Grid-scan bandwidth selection from target samples (Euclidean only).
    #[serde(default)]
    pub auto: Option<AutoKernelConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoKernelConfig {
    #[serde(default = "default_grid_min")]
    pub grid_min: f64,
    #[serde(default = "default_grid_max")]
    pub grid_max: f64,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_tune_samples")]
    pub samples: usize,
}

fn default_grid_min() -> f64 {
    1e-4
}
fn default_grid_max() -> f64 {
    0.1
}
fn default_grid_size() -> usize {
    16
}
fn default_tune_samples() -> usize {
    200
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_r")]
    pub control: f64,
}

fn default_q() -> f64 {
    1.0
}
fn default_r() -> f64 {
    0.1
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            q: default_q(),
            r: default_r(),
            control: default_r(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    pub trajectory: String,
    pub report: String,
}

impl RunConfig {
    pub fn from_file(path: &str) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {path}"))?;
        let config: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {path}"))?;
        if config.schema != RUN_CONFIG_SCHEMA {
            return Err(anyhow!(
                "unsupported config schema {:?} (expected {RUN_CONFIG_SCHEMA})",
                config.schema
            ));
        }
        if config.horizon < 2 {
            bail!("horizon must be at least 2");
        }
        if config.dt <= 0.0 {
            bail!("dt must be positive");
        }
        if !(config.kernel.theta.is_some() ^ config.kernel.auto.is_some()) {
            bail!("kernel needs exactly one of `theta` or `auto`");
        }
        Ok(config)
    }
}

/// Bench sweep configuration: the harness settings plus output paths.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFileConfig {
    pub schema: String,
    pub bench: kes_core::bench::BenchConfig,
    pub outputs: BenchOutputs,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchOutputs {
    pub csv: String,
    pub jsonl: String,
    pub plot: String,
}

impl BenchFileConfig {
    pub fn from_file(path: &str) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {path}"))?;
        let config: BenchFileConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {path}"))?;
        if config.schema != BENCH_CONFIG_SCHEMA {
            return Err(anyhow!(
                "unsupported config schema {:?} (expected {BENCH_CONFIG_SCHEMA})",
                config.schema
            ));
        }
        Ok(config)
    }
}
