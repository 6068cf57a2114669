//! Experiment configuration: TOML with mandatory unknown-key rejection and
//! `key=value` overrides applied on top of the parsed file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::check_moduli;
use crate::streaming::StreamParams;
use crate::weighting::WeightScheme;

/// Full experiment description. Defaults reproduce the reference setup:
/// 30 agents, d = 50, mu = 0.01, L = 0.1, eta = 0.05, C_max = 10,
/// sigma^2 = 1, 50 runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_agents: usize,
    pub dim: usize,
    pub mu: f64,
    #[serde(rename = "L")]
    pub l_smooth: f64,
    pub eta: f64,
    #[serde(rename = "E")]
    pub inner_steps: usize,
    pub c_max: f64,
    pub sigma2: f64,
    pub horizon: usize,
    pub n_runs: usize,
    pub master_seed: u64,
    pub measure_stride: usize,
    pub initial_radius: f64,
    pub growth_factor: f64,
    /// One graph for all runs (true) or a fresh graph per run.
    pub shared_topology: bool,
    /// Every agent receives the same sample stream.
    pub homogeneous_agents: bool,
    /// Permit `eta` above the contraction bound (logged, never silent).
    pub allow_unstable_step: bool,
    /// Explicit spectrum for `bounds`; when absent a graph is generated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_n: Option<f64>,
    pub scheme: WeightScheme,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_agents: 30,
            dim: 50,
            mu: 0.01,
            l_smooth: 0.1,
            eta: 0.05,
            inner_steps: 5,
            c_max: 10.0,
            sigma2: 1.0,
            horizon: 300,
            n_runs: 50,
            master_seed: 1,
            measure_stride: 1,
            initial_radius: 0.3,
            growth_factor: 1.1,
            shared_topology: true,
            homogeneous_agents: false,
            allow_unstable_step: false,
            lambda2: None,
            lambda_n: None,
            scheme: WeightScheme::Uniform,
        }
    }
}

/// Horizon above which `run` suggests a measurement stride.
pub const STRIDE_HINT_HORIZON: usize = 2000;

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Self::from_table(parse_table(s)?)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: ExperimentConfig =
            ExperimentConfig::deserialize(table).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `base`, applies `overrides` in order, then deserializes.
    pub fn load(base: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = parse_table(base)?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        Self::from_table(table)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn stream_params(&self) -> StreamParams {
        StreamParams {
            n_agents: self.n_agents,
            dim: self.dim,
            mu: self.mu,
            l_smooth: self.l_smooth,
            c_max: self.c_max,
            sigma2: self.sigma2,
            homogeneous: self.homogeneous_agents,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.stream_params().validate().map_err(wrap)?;
        check_moduli(self.mu, self.l_smooth).map_err(wrap)?;
        self.scheme.validate().map_err(wrap)?;
        let positive = [
            ("eta", self.eta),
            ("initial_radius", self.initial_radius),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.growth_factor.is_finite() && self.growth_factor > 1.0) {
            return Err(Error::Config(format!(
                "growth_factor must be > 1, got {}",
                self.growth_factor
            )));
        }
        let counts = [
            ("E", self.inner_steps),
            ("horizon", self.horizon),
            ("n_runs", self.n_runs),
            ("measure_stride", self.measure_stride),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if let Some(l2) = self.lambda2 {
            if !(l2 > -1.0 && l2 < 1.0) {
                return Err(Error::Config(format!("lambda2 must lie in (-1, 1), got {l2}")));
            }
        }
        if let Some(ln) = self.lambda_n {
            if !(ln > -1.0 && ln <= 1.0) {
                return Err(Error::Config(format!("lambda_n must lie in (-1, 1], got {ln}")));
            }
        }
        Ok(())
    }

    /// Measurement stride worth suggesting for long horizons, if any.
    pub fn suggested_stride(&self) -> Option<usize> {
        (self.horizon > STRIDE_HINT_HORIZON && self.measure_stride == 1)
            .then(|| self.horizon.div_ceil(STRIDE_HINT_HORIZON))
    }

    /// Tag for output files of this (scheme, E) cell.
    pub fn cell_tag(&self) -> String {
        format!("{}_E{}", self.scheme.tag(), self.inner_steps)
    }
}

fn parse_table(s: &str) -> Result<toml::Table> {
    s.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(v: &str) -> toml::Value {
    match format!("v = {v}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(v.to_string())),
        Err(_) => toml::Value::String(v.to_string()),
    }
}

/// Applies `key=value` to a parsed config table. Dotted keys address nested
/// tables (`scheme.gamma=0.9`). `scheme` also accepts the shorthands
/// `uniform`, `discounted` (keeps the current gamma, else 0.7) and
/// `discounted:<gamma>`.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    if key == "scheme" {
        if let Some(scheme) = scheme_shorthand(table, value)? {
            let v = toml::Value::try_from(scheme).map_err(|e| Error::Config(e.to_string()))?;
            table.insert("scheme".into(), v);
            return Ok(());
        }
    }
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key '{key}'")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key '{key}': '{p}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value));
    Ok(())
}

fn scheme_shorthand(table: &toml::Table, value: &str) -> Result<Option<WeightScheme>> {
    let current_gamma = table
        .get("scheme")
        .and_then(|s| s.get("gamma"))
        .and_then(|g| g.as_float());
    let scheme = match value {
        "uniform" => WeightScheme::Uniform,
        "discounted" => WeightScheme::Discounted {
            gamma: current_gamma.unwrap_or(0.7),
        },
        v if v.starts_with("discounted:") => {
            let g: f64 = v["discounted:".len()..]
                .parse()
                .map_err(|_| Error::Config(format!("bad discount factor in '{v}'")))?;
            WeightScheme::Discounted { gamma: g }
        }
        _ => return Ok(None),
    };
    Ok(Some(scheme))
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
