//! Experiment configuration: JSON-serializable description of a run that
//! the command-line front end (or a library caller) can execute.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect;
use crate::drift::{DriftKind, ParameterDrift};
use crate::error::{Error, Result};
use crate::integrate::IntegrationOptions;
use crate::systems::{Coupling, SystemModel};

fn default_epsilon() -> f64 {
    detect::DEFAULT_EPSILON
}
fn default_sustain() -> f64 {
    detect::DEFAULT_SUSTAIN
}
fn default_window() -> f64 {
    detect::DEFAULT_WINDOW
}
fn default_rise_min() -> f64 {
    detect::DEFAULT_RISE_MIN
}

/// Detector parameters; unset optional fields fall back to per-system
/// defaults at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorOptions {
    /// Derivative threshold of the sustained-derivative test.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Duration the derivative must stay beyond the threshold.
    #[serde(default = "default_sustain")]
    pub h: f64,
    /// Averaging window of the windowed growth-rate means.
    #[serde(default = "default_window")]
    pub window: f64,
    /// Tracking radius; defaults to the distance between the tracked branch
    /// and its nearest unstable neighbor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Angle-series transient skip (absolute time); defaults to 5% of the
    /// run past its start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient_skip: Option<f64>,
    /// Minimum angle recovery that confirms a dip.
    #[serde(default = "default_rise_min")]
    pub rise_min: f64,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        DetectorOptions {
            epsilon: default_epsilon(),
            h: default_sustain(),
            window: default_window(),
            radius: None,
            transient_skip: None,
            rise_min: default_rise_min(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OutputOptions {
    /// Output directory; overrides the TIPSCOPE_OUT environment variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default)]
    pub format: OutputFormat,
}

/// Drift law as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub kind: DriftKind,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
}

impl DriftConfig {
    pub fn build(&self) -> Result<ParameterDrift> {
        match self.kind {
            DriftKind::Linear => {
                let mut d = ParameterDrift::linear(self.rate);
                if let Some(l0) = self.lambda0 {
                    d.lambda0 = l0;
                }
                Ok(d)
            }
            DriftKind::Logistic => match self.lambda0 {
                Some(l0) => ParameterDrift::logistic_from(self.rate, l0),
                None => Ok(ParameterDrift::logistic(self.rate)),
            },
            DriftKind::AffineDecreasing => {
                let mut d = ParameterDrift::affine_decreasing(self.rate)?;
                if let Some(l0) = self.lambda0 {
                    d.lambda0 = l0;
                }
                Ok(d)
            }
        }
    }
}

/// Polynomial-family system defined entirely in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomSystemConfig {
    pub name: String,
    /// `false` selects the single-attractor family, `true` the bistable one.
    pub bistable: bool,
    pub delta: f64,
    /// Present for the two-dimensional extensions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<Coupling>,
    pub drift: DriftConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Built-in system name; mutually exclusive with `custom_system`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_system: Option<CustomSystemConfig>,
    /// Drift rate for a built-in system (custom systems carry their own).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// Rate of the untipped comparison run; defaults per system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_condition: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_span: Option<(f64, f64)>,
    #[serde(default)]
    pub integration: IntegrationOptions,
    #[serde(default)]
    pub detectors: DetectorOptions,
    #[serde(default)]
    pub output: OutputOptions,
}

impl ExperimentConfig {
    pub fn for_builtin(system: &str, rate: f64) -> Self {
        ExperimentConfig {
            system: Some(system.to_string()),
            custom_system: None,
            rate: Some(rate),
            reference_rate: None,
            initial_condition: None,
            t_span: None,
            integration: IntegrationOptions::default(),
            detectors: DetectorOptions::default(),
            output: OutputOptions::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.system, &self.custom_system) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either a built-in system name or a custom system, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config("no system selected".into()));
            }
            (Some(_), None) => {
                if self.rate.is_none() {
                    return Err(Error::Config("a built-in system needs a rate".into()));
                }
            }
            (None, Some(_)) => {}
        }
        if let Some(r) = self.rate {
            if !r.is_finite() {
                return Err(Error::Config(format!("rate {r} is not finite")));
            }
        }
        if let Some(r) = self.reference_rate {
            if !r.is_finite() {
                return Err(Error::Config(format!("reference rate {r} is not finite")));
            }
        }
        if let Some((t0, t1)) = self.t_span {
            if !t0.is_finite() || !t1.is_finite() || t1 <= t0 {
                return Err(Error::Config(format!("bad time span [{t0}, {t1}]")));
            }
        }
        Ok(())
    }

    /// Config-defined systems have no catalog row to fall back on: the span
    /// must be given, and the default start state sits on the stable branch.
    fn materialize_custom(
        &self,
        custom: &CustomSystemConfig,
        rate_override: Option<f64>,
    ) -> Result<SystemModel> {
        let t_span = self
            .t_span
            .ok_or_else(|| Error::Config("a custom system needs a time span".into()))?;
        let drift_cfg = match rate_override {
            Some(rate) => DriftConfig { rate, ..custom.drift.clone() },
            None => custom.drift.clone(),
        };
        let drift = drift_cfg.build()?;
        let lam0 = drift.lambda_at(t_span.0);
        let x1 = lam0 + custom.delta;
        let x0 = self.initial_condition.clone().unwrap_or_else(|| match custom.coupling {
            None => vec![x1],
            Some(Coupling::Linear) => vec![x1, x1],
            Some(Coupling::HalfSquare) => vec![x1, 0.5 * x1 * x1],
        });
        SystemModel::polynomial(
            &custom.name,
            custom.bistable,
            custom.delta,
            custom.coupling,
            drift,
            x0,
            t_span,
        )
    }

    /// Materializes the configured system, applying initial-condition and
    /// span overrides.
    pub fn build_system(&self) -> Result<SystemModel> {
        self.validate()?;
        let mut sys = match (&self.system, &self.custom_system) {
            (Some(name), None) => {
                SystemModel::builtin(name, self.rate.expect("validated above"))?
            }
            (None, Some(custom)) => return self.materialize_custom(custom, None),
            _ => unreachable!("validated above"),
        };
        if let Some(ic) = &self.initial_condition {
            if ic.len() != sys.dim {
                return Err(Error::Config(format!(
                    "initial condition has {} components, system has dimension {}",
                    ic.len(),
                    sys.dim
                )));
            }
            sys.x0 = ic.clone();
        }
        if let Some(span) = self.t_span {
            sys.t_span = span;
        }
        Ok(sys)
    }

    /// Builds the untipped comparison system at the reference rate, when one
    /// applies.
    pub fn build_reference_system(&self) -> Result<Option<SystemModel>> {
        self.validate()?;
        let rate = match (self.reference_rate, &self.system) {
            (Some(r), _) => Some(r),
            (None, Some(name)) => crate::systems::default_reference_rate(name).ok(),
            (None, None) => None,
        };
        let Some(rate) = rate else { return Ok(None) };
        if let Some(custom) = &self.custom_system {
            return self.materialize_custom(custom, Some(rate)).map(Some);
        }
        let name = self.system.as_ref().expect("validated above");
        let mut reference = SystemModel::builtin(name, rate)?;
        if let Some(ic) = &self.initial_condition {
            reference.x0 = ic.clone();
        }
        if let Some(span) = self.t_span {
            reference.t_span = span;
        }
        Ok(Some(reference))
    }
}
