//! TOML run and grid configuration, validated before any computation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ResponseMode, SyntheticKind};
use crate::glm::CostPair;
use crate::kernel::KernelSpec;
use crate::selection::SearchGrid;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Grid overrides; absent keys keep the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `radial:γ` or `anova:γ:d`.
    pub kernels: Option<Vec<String>>,
    pub rhos: Option<Vec<f64>>,
    /// `FP:FN`.
    pub costs: Option<String>,
    pub seed: Option<u64>,
    pub ratio_tolerance: Option<f64>,
}

impl GridConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Applies the overrides on top of `base` and validates the result.
    pub fn apply(&self, mut base: SearchGrid) -> Result<SearchGrid, ConfigError> {
        if let Some(ks) = &self.kernels {
            base.kernels = ks
                .iter()
                .map(|k| k.parse::<KernelSpec>().map_err(|e| ConfigError::Invalid(format!("kernel `{k}`: {e}"))))
                .collect::<Result<_, _>>()?;
        }
        if let Some(r) = &self.rhos {
            base.rhos = r.clone();
        }
        if let Some(c) = &self.costs {
            base.costs = parse_costs(c)?;
        }
        if let Some(s) = self.seed {
            base.seed = s;
        }
        if let Some(t) = self.ratio_tolerance {
            base.ratio_tolerance = t;
        }
        base.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(base)
    }
}

pub fn parse_costs(text: &str) -> Result<CostPair, ConfigError> {
    text.parse::<CostPair>().map_err(|e| ConfigError::Invalid(e.to_string()))
}

/// Comma-separated ρ list, e.g. `0.3,0.5,0.9`.
pub fn parse_rho_list(text: &str) -> Result<Vec<f64>, ConfigError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| ConfigError::Invalid(format!("bad ρ value `{t}`")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Kpclr,
    Baseline,
    Compare,
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub kind: SyntheticKind,
    pub n: usize,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    pub input: Option<PathBuf>,
    pub response: Option<String>,
    pub response_mode: Option<ResponseMode>,
    /// Categorical schema file.
    pub schema: Option<PathBuf>,
    pub costs: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub proportions: Option<[f64; 3]>,
    pub stratified: Option<bool>,
    pub grid: Option<GridConfig>,
    pub simulate: Option<SimulateConfig>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_owned()));
        match self.mode {
            RunMode::Simulate => {
                let Some(sim) = &self.simulate else {
                    return bad("mode `simulate` needs a [simulate] table");
                };
                if !(sim.noise.is_finite() && sim.noise >= 0.0) {
                    return bad("simulate.noise must be a nonnegative number");
                }
            }
            _ => {
                if self.input.is_none() && self.simulate.is_none() {
                    return bad("an `input` file or a [simulate] table is required");
                }
                if self.input.is_some() && self.response.is_none() {
                    return bad("`response` is required with `input`");
                }
            }
        }
        if let Some(c) = &self.costs {
            parse_costs(c)?;
        }
        if let Some(p) = self.proportions {
            if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("proportions must be three positive numbers summing to 1");
            }
        }
        if let Some(g) = &self.grid {
            g.apply(SearchGrid::default())?;
        }
        Ok(())
    }
}
