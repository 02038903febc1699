//! Run configuration: one TOML file per run, see `docs/config.md`.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use storval::eval::{Mode, SweepParam};
use storval::markov::{SamplingDensity, MAX_POINTS};
use storval::priceseries::{ColumnSpec, DailyRule, OuParams};
use storval::storage::StorageSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub data: Option<DataConfig>,
    /// Price model given directly instead of calibrating on data.
    pub calibration: Option<InlineCalibration>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub storage: StorageSpec,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default, rename = "sweep")]
    pub sweeps: Vec<SweepConfig>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("storval-out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RuleName {
    #[default]
    DailyMean,
    FixedHour,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Hourly price CSV, relative to the config file.
    pub path: PathBuf,
    #[serde(default = "default_timestamp_column")]
    pub timestamp_column: String,
    #[serde(default = "default_price_column")]
    pub price_column: String,
    #[serde(default)]
    pub rule: RuleName,
    /// Hour used by the fixed-hour rule.
    pub hour: Option<u32>,
    /// First decision day.
    pub start: NaiveDate,
}

fn default_timestamp_column() -> String {
    ColumnSpec::default().timestamp
}

fn default_price_column() -> String {
    ColumnSpec::default().price
}

impl DataConfig {
    pub fn columns(&self) -> ColumnSpec {
        ColumnSpec {
            timestamp: self.timestamp_column.clone(),
            price: self.price_column.clone(),
        }
    }

    pub fn daily_rule(&self) -> DailyRule {
        match self.rule {
            RuleName::DailyMean => DailyRule::DailyMean,
            RuleName::FixedHour => DailyRule::FixedHour { hour: self.hour.unwrap_or(0) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineCalibration {
    /// Daily log-price means `m_0, …, m_T`.
    pub mean_curve: Vec<f64>,
    pub a: f64,
    pub sigma: f64,
    #[serde(default)]
    pub xi0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub quadrature_points: usize,
    pub density: SamplingDensity,
    pub iterations: usize,
    pub forward_paths: usize,
    pub stall_tolerance: Option<f64>,
    pub stall_window: usize,
    pub prune_parallel: bool,
    /// In-sample scenarios behind each sweep price's standard error.
    pub eval_scenarios: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            quadrature_points: 8,
            density: SamplingDensity::Innovation,
            iterations: 500,
            forward_paths: 1,
            stall_tolerance: None,
            stall_window: 50,
            prune_parallel: false,
            eval_scenarios: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenarios: usize,
    pub mode: Mode,
    /// Risk aversions to simulate; the storage one when empty.
    pub rhos: Vec<f64>,
    /// Fixed kernel bandwidth; Silverman's rule when absent.
    pub bandwidth: Option<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            scenarios: 1000,
            mode: Mode::OutOfSample,
            rhos: Vec::new(),
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
    #[serde(default)]
    pub rhos: Vec<f64>,
}

/// Command-line overrides applied after loading.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub quadrature_points: Option<usize>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads, applies overrides and validates. Relative paths in the file
    /// are resolved against the file's directory.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = &mut config.data {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        if config.out_dir.is_relative() {
            config.out_dir = base.join(&config.out_dir);
        }
        if let Some(n) = overrides.quadrature_points {
            config.model.quadrature_points = n;
        }
        if let Some(k) = overrides.iterations {
            config.model.iterations = k;
        }
        if let Some(s) = overrides.seed {
            config.seed = s;
        }
        if let Some(o) = &overrides.out {
            config.out_dir = o.clone();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.storage.validate().map_err(|e| format!("storage: {e}"))?;
        let m = &self.model;
        if !(1..=MAX_POINTS).contains(&m.quadrature_points) {
            return Err(format!("model.quadrature_points: {} outside 1..={MAX_POINTS}", m.quadrature_points));
        }
        if m.iterations == 0 {
            return Err("model.iterations: must be at least 1".into());
        }
        if m.forward_paths == 0 {
            return Err("model.forward_paths: must be at least 1".into());
        }
        if let Some(tol) = m.stall_tolerance {
            if !(tol >= 0.0) || m.stall_window == 0 {
                return Err("model.stall_tolerance: needs a nonnegative tolerance and a positive stall_window".into());
            }
        }
        match (&self.data, &self.calibration) {
            (None, None) => return Err("config needs a [data] or a [calibration] table".into()),
            (Some(_), Some(_)) => return Err("config has both [data] and [calibration]; keep one".into()),
            _ => {}
        }
        if let Some(d) = &self.data {
            if !d.path.is_file() {
                return Err(format!("data.path: {} does not exist", d.path.display()));
            }
            match (d.rule, d.hour) {
                (RuleName::FixedHour, None) => return Err("data.hour: required by the fixed-hour rule".into()),
                (RuleName::FixedHour, Some(h)) if h > 23 => return Err(format!("data.hour: {h} outside 0..=23")),
                (RuleName::DailyMean, Some(_)) => return Err("data.hour: only used by the fixed-hour rule".into()),
                _ => {}
            }
        }
        if let Some(c) = &self.calibration {
            if c.mean_curve.len() != self.storage.horizon + 1 {
                return Err(format!(
                    "calibration.mean_curve: {} values, horizon {} needs {}",
                    c.mean_curve.len(),
                    self.storage.horizon,
                    self.storage.horizon + 1
                ));
            }
            if c.mean_curve.iter().chain([&c.xi0]).any(|v| !v.is_finite()) {
                return Err("calibration: mean_curve and xi0 must be finite".into());
            }
            OuParams::new(c.a, c.sigma).map_err(|e| format!("calibration: {e}"))?;
        }
        let s = &self.simulate;
        if s.scenarios == 0 {
            return Err("simulate.scenarios: must be at least 1".into());
        }
        if s.rhos.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err("simulate.rhos: every rho must be positive".into());
        }
        if let Some(h) = s.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(format!("simulate.bandwidth: {h} must be positive"));
            }
        }
        for (k, w) in self.sweeps.iter().enumerate() {
            if w.values.is_empty() || w.values.iter().any(|v| !v.is_finite()) {
                return Err(format!("sweep[{k}].values: need at least one finite value"));
            }
            if w.rhos.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                return Err(format!("sweep[{k}].rhos: every rho must be positive"));
            }
            let bad = match w.parameter {
                SweepParam::Capacity | SweepParam::ChargeRateFraction => w.values.iter().any(|v| *v < 0.0),
                SweepParam::Sigma | SweepParam::Rho => w.values.iter().any(|v| *v <= 0.0),
            };
            if bad {
                return Err(format!("sweep[{k}].values: out of range for {}", w.parameter.name()));
            }
        }
        Ok(())
    }

    /// Risk aversions the simulate command runs.
    pub fn simulate_rhos(&self) -> Vec<f64> {
        if self.simulate.rhos.is_empty() {
            vec![self.storage.rho]
        } else {
            self.simulate.rhos.clone()
        }
    }
}
