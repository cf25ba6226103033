//! Experiment configuration: one JSON document, preset files, dotted-path
//! overrides, and full validation with line-anchored error messages.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use scorelab_core::linalg;
use scorelab_core::models::{LrSchedule, OptimConfig};
use scorelab_core::rng::{stream, StreamDomain};
use scorelab_core::train::AlphaMode;
use scorelab_core::{Schedule, ScheduleKind, TargetSpec};

/// Named experiments the runner knows how to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    GaussianLinear,
    GmmBsm,
    DimensionSweep,
    VarianceCompare,
    MartingaleCheck,
    FastInference,
    IdentitySuite,
}

impl ExperimentName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentName::GaussianLinear => "gaussian-linear",
            ExperimentName::GmmBsm => "gmm-bsm",
            ExperimentName::DimensionSweep => "dimension-sweep",
            ExperimentName::VarianceCompare => "variance-compare",
            ExperimentName::MartingaleCheck => "martingale-check",
            ExperimentName::FastInference => "fast-inference",
            ExperimentName::IdentitySuite => "identity-suite",
        }
    }
}

/// Target description: either a concrete distribution or a seeded random
/// covariance family resolved per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetConfig {
    Gaussian { sigma: Vec<Vec<f64>> },
    Gmm { means: Vec<Vec<f64>>, variances: Vec<f64>, weights: Vec<f64> },
    /// `Q diag(U(lo,hi)) Q^T` with a random rotation.
    RandomSpd { d: usize, eig_low: f64, eig_high: f64 },
    /// `scale (M M^T + v v^T)` with standard normal entries.
    RandomFactor { d: usize, scale: f64 },
}

impl TargetConfig {
    pub fn resolve(&self, seed: u64) -> scorelab_core::Result<TargetSpec> {
        match self {
            TargetConfig::Gaussian { sigma } => {
                let d = sigma.len();
                let m = nalgebra::DMatrix::from_fn(d, d, |i, j| sigma[i][j]);
                TargetSpec::gaussian(m)
            }
            TargetConfig::Gmm { means, variances, weights } => TargetSpec::gmm(
                means.iter().map(|m| nalgebra::DVector::from_vec(m.clone())).collect(),
                variances.clone(),
                weights.clone(),
            ),
            TargetConfig::RandomSpd { d, eig_low, eig_high } => {
                let mut rng = stream(seed, StreamDomain::Experiment, 0);
                TargetSpec::gaussian(linalg::random_spd_uniform_eigs(
                    *d, *eig_low, *eig_high, &mut rng,
                ))
            }
            TargetConfig::RandomFactor { d, scale } => {
                let mut rng = stream(seed, StreamDomain::Experiment, 0);
                TargetSpec::gaussian(linalg::random_factor_cov(*d, *scale, &mut rng))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetConfig::Gaussian { sigma } => sigma.len(),
            TargetConfig::Gmm { means, .. } => means.first().map_or(0, |m| m.len()),
            TargetConfig::RandomSpd { d, .. } | TargetConfig::RandomFactor { d, .. } => *d,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKindConfig,
    pub n: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKindConfig {
    Linear,
    Quadratic,
}

impl ScheduleConfig {
    pub fn build(&self) -> scorelab_core::Result<Schedule> {
        let kind = match self.kind {
            ScheduleKindConfig::Linear => ScheduleKind::Linear,
            ScheduleKindConfig::Quadratic => ScheduleKind::Quadratic,
        };
        Schedule::new(kind, self.n, self.horizon)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Linear,
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "default_activation")]
        activation: scorelab_core::models::Activation,
    },
}

fn default_activation() -> scorelab_core::models::Activation {
    scorelab_core::models::Activation::Tanh
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMethod {
    Dsm,
    Bsm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: TrainMethod,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// BSM: timesteps trained with plain DSM before bootstrapping begins.
    /// Defaults to N/4.
    #[serde(default)]
    pub k0: Option<usize>,
    #[serde(default)]
    pub alpha: AlphaMode,
    #[serde(default = "default_per_step_epochs")]
    pub per_step_epochs: usize,
    #[serde(default)]
    pub first_step_epochs: Option<usize>,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimConfig,
    #[serde(default = "default_lr_schedule")]
    pub lr_schedule: LrSchedule,
}

fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    512
}
fn default_per_step_epochs() -> usize {
    2
}
fn default_optimizer() -> OptimConfig {
    OptimConfig::adamw(1e-3)
}
fn default_lr_schedule() -> LrSchedule {
    LrSchedule::CosineWarmup { warmup_frac: 0.1 }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleConfig {
    #[serde(default = "default_sample_n")]
    pub n: usize,
    #[serde(default)]
    pub integrator: scorelab_core::sample::Integrator,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_offset")]
    pub offset: usize,
}

fn default_sample_n() -> usize {
    10_000
}
fn default_stride() -> usize {
    1
}
fn default_offset() -> usize {
    1
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            n: default_sample_n(),
            integrator: Default::default(),
            stride: 1,
            offset: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisConfig {
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
}

fn default_n_mc() -> usize {
    100_000
}
fn default_t() -> f64 {
    1.0
}
fn default_deltas() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { n_mc: default_n_mc(), t: default_t(), deltas: default_deltas() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dims: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_m_test")]
    pub m_test: usize,
    /// "score" (default) or "noise": the latter scales the per-timestep
    /// error by sigma_t^2, the noise-prediction convention.
    #[serde(default = "default_error_space")]
    pub error_space: String,
}

fn default_hidden() -> usize {
    128
}
fn default_m_test() -> usize {
    1000
}
fn default_error_space() -> String {
    "score".to_string()
}

/// The experiment document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentName,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub target: TargetConfig,
    pub schedule: ScheduleConfig,
    #[serde(default = "default_m")]
    pub m: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

fn default_m() -> usize {
    10_000
}

impl ExperimentConfig {
    /// Effective k0 (defaults to N/4, clamped into [1, N]).
    pub fn k0(&self) -> usize {
        self.train.k0.unwrap_or(self.schedule.n / 4).clamp(1, self.schedule.n)
    }

    /// Cross-field invariants; returns every violation, field-anchored.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.seeds.is_empty() {
            errs.push("seeds: must be nonempty".to_string());
        }
        if self.m == 0 {
            errs.push("m: must be positive".to_string());
        }
        if self.schedule.n == 0 {
            errs.push("schedule.n: must be positive".to_string());
        }
        if !(self.schedule.horizon > 0.0) {
            errs.push(format!("schedule.horizon: must be > 0, got {}", self.schedule.horizon));
        }
        if self.train.epochs == 0 {
            errs.push("train.epochs: must be >= 1".to_string());
        }
        if self.train.batch_size == 0 {
            errs.push("train.batch_size: must be >= 1".to_string());
        }
        if let Some(k0) = self.train.k0 {
            if k0 == 0 || k0 > self.schedule.n {
                errs.push(format!(
                    "train.k0: the sequential trainer needs 1 <= k0 <= N = {}, got {k0}",
                    self.schedule.n
                ));
            }
        }
        if let AlphaMode::Fixed { value } = self.train.alpha {
            if !(0.0..=1.0).contains(&value) {
                errs.push(format!("train.alpha.value: must lie in [0,1], got {value}"));
            }
        }
        if let TargetConfig::Gmm { means, variances, weights } = &self.target {
            if means.is_empty() {
                errs.push("target.means: need at least one component".to_string());
            }
            if weights.iter().any(|&w| !(w > 0.0)) {
                errs.push("target.weights: must be strictly positive".to_string());
            }
            let total: f64 = weights.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                errs.push(format!("target.weights: must sum to 1 within 1e-12, got {total}"));
            }
            if variances.iter().any(|&v| v < 0.0) {
                errs.push("target.variances: must be >= 0".to_string());
            }
        }
        if self.sample.stride == 0
            || self.sample.offset == 0
            || self.sample.offset > self.sample.stride
        {
            errs.push(format!(
                "sample: need 1 <= offset <= stride, got stride {} offset {}",
                self.sample.stride, self.sample.offset
            ));
        }
        if self.experiment == ExperimentName::DimensionSweep {
            match &self.sweep {
                None => errs.push("sweep: required for the dimension-sweep experiment".into()),
                Some(s) => {
                    if s.dims.is_empty() {
                        errs.push("sweep.dims: must be nonempty".into());
                    }
                    if s.error_space != "score" && s.error_space != "noise" {
                        errs.push(format!(
                            "sweep.error_space: expected \"score\" or \"noise\", got {:?}",
                            s.error_space
                        ));
                    }
                }
            }
        }
        errs
    }
}

/// Apply `--path.to.field=value` overrides onto the raw JSON document.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<(), String> {
    for item in overrides {
        let body = item.strip_prefix("--").unwrap_or(item);
        let (path, raw) = body
            .split_once('=')
            .ok_or_else(|| format!("override {item:?} is not of the form --a.b.c=value"))?;
        let parsed: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
        let mut cursor = &mut *doc;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if !cursor.is_object() {
                return Err(format!("override {item:?}: {part} is not an object field"));
            }
            let map = cursor.as_object_mut().unwrap();
            if i + 1 == parts.len() {
                map.insert(part.to_string(), parsed.clone());
            } else {
                cursor = map
                    .entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()));
            }
        }
    }
    Ok(())
}

/// Load, override, parse, and validate a config document.
pub fn load_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig, Vec<String>> {
    let mut doc: Value =
        serde_json::from_str(text).map_err(|e| vec![format!("json parse: {e}")])?;
    apply_overrides(&mut doc, overrides).map_err(|e| vec![e])?;
    let cfg: ExperimentConfig =
        serde_json::from_value(doc).map_err(|e| vec![format!("schema: {e}")])?;
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(errs)
    }
}

/// Built-in presets, shipped as files under `presets/` and embedded here.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "gaussian-linear" => Some(include_str!("../presets/gaussian-linear.json")),
        "gmm-bsm" => Some(include_str!("../presets/gmm-bsm.json")),
        "dimension-sweep" => Some(include_str!("../presets/dimension-sweep.json")),
        "variance-compare" => Some(include_str!("../presets/variance-compare.json")),
        "martingale-check" => Some(include_str!("../presets/martingale-check.json")),
        "fast-inference" => Some(include_str!("../presets/fast-inference.json")),
        "identity-suite" => Some(include_str!("../presets/identity-suite.json")),
        _ => None,
    }
}

pub const PRESET_NAMES: &[&str] = &[
    "gaussian-linear",
    "gmm-bsm",
    "dimension-sweep",
    "variance-compare",
    "martingale-check",
    "fast-inference",
    "identity-suite",
];
