//! TOML run configuration.
//!
//! Every key is optional; missing keys take the defaults of
//! [`SimConfig::default`]. Unknown keys are rejected.
//!
//! ```toml
//! n = 4
//! dt = 0.1
//! steps = 3000
//! trials = 100
//! master_seed = 1
//! filters = ["STD", "FEJ", "OC", "KD", "IDEAL"]
//! sigma_v = 0.3
//! sigma_omega = 0.08
//! sigma_meas = 0.1
//! prior_sigma_pos = 0.3
//! prior_sigma_yaw = 0.1
//!
//! [[helix]]           # one table per robot; omit all of them for the defaults
//! center = [3.0, 3.0]
//! radius = 3.0
//! angular_rate = 0.2
//! vertical_rate = 0.05
//! z_bounds = [1.0, 9.0]
//! yaw_rate = 0.2
//! initial_phase = 0.0
//! initial_yaw = 1.5707963267948966
//! ```
//!
//! When `helix` tables are given and `n` is not, `n` is their count.

use std::path::Path;

use kdcl_core::sim::{default_helices, HelixSpec, SimConfig};
use kdcl_core::FilterKind;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    master_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    filters: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_meas: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prior_sigma_pos: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prior_sigma_yaw: Option<f64>,
    #[serde(rename = "helix", skip_serializing_if = "Option::is_none")]
    helices: Option<Vec<HelixDoc>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HelixDoc {
    center: [f64; 2],
    radius: f64,
    angular_rate: f64,
    vertical_rate: f64,
    z_bounds: [f64; 2],
    yaw_rate: f64,
    initial_phase: f64,
    initial_yaw: f64,
}

impl From<&HelixSpec> for HelixDoc {
    fn from(h: &HelixSpec) -> Self {
        Self {
            center: [h.center.x, h.center.y],
            radius: h.radius,
            angular_rate: h.angular_rate,
            vertical_rate: h.vertical_rate,
            z_bounds: h.z_bounds,
            yaw_rate: h.yaw_rate,
            initial_phase: h.initial_phase,
            initial_yaw: h.initial_yaw,
        }
    }
}

impl From<HelixDoc> for HelixSpec {
    fn from(h: HelixDoc) -> Self {
        Self {
            center: Vector2::new(h.center[0], h.center[1]),
            radius: h.radius,
            angular_rate: h.angular_rate,
            vertical_rate: h.vertical_rate,
            z_bounds: h.z_bounds,
            yaw_rate: h.yaw_rate,
            initial_phase: h.initial_phase,
            initial_yaw: h.initial_yaw,
        }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(document: &str) -> Result<SimConfig, CliError> {
    let doc: ConfigDoc = toml::from_str(document).map_err(|e| CliError::Config(e.to_string()))?;
    let base = SimConfig::default();
    let helices: Option<Vec<HelixSpec>> = doc.helices.map(|hs| hs.into_iter().map(Into::into).collect());
    let n = doc.n.or(helices.as_ref().map(Vec::len)).unwrap_or(base.n);
    let filters = match doc.filters {
        Some(names) => names
            .iter()
            .map(|s| s.parse::<FilterKind>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("filters: {e}")))?,
        None => base.filters,
    };
    let config = SimConfig {
        n,
        dt: doc.dt.unwrap_or(base.dt),
        steps: doc.steps.unwrap_or(base.steps),
        helices: helices.unwrap_or_else(|| default_helices(n)),
        sigma_v: doc.sigma_v.unwrap_or(base.sigma_v),
        sigma_omega: doc.sigma_omega.unwrap_or(base.sigma_omega),
        sigma_meas: doc.sigma_meas.unwrap_or(base.sigma_meas),
        prior_sigma_pos: doc.prior_sigma_pos.unwrap_or(base.prior_sigma_pos),
        prior_sigma_yaw: doc.prior_sigma_yaw.unwrap_or(base.prior_sigma_yaw),
        trials: doc.trials.unwrap_or(base.trials),
        filters,
        master_seed: doc.master_seed.unwrap_or(base.master_seed),
    };
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<SimConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// A complete document (every key explicit) that parses back to `config`.
pub fn serialize_config(config: &SimConfig) -> Result<String, CliError> {
    let doc = ConfigDoc {
        n: Some(config.n),
        dt: Some(config.dt),
        steps: Some(config.steps),
        trials: Some(config.trials),
        master_seed: Some(config.master_seed),
        filters: Some(config.filters.iter().map(|k| k.as_str().to_owned()).collect()),
        sigma_v: Some(config.sigma_v),
        sigma_omega: Some(config.sigma_omega),
        sigma_meas: Some(config.sigma_meas),
        prior_sigma_pos: Some(config.prior_sigma_pos),
        prior_sigma_yaw: Some(config.prior_sigma_yaw),
        helices: Some(config.helices.iter().map(Into::into).collect()),
    };
    toml::to_string(&doc).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
}
