//! Run configuration shared by the command-line tools.

use serde::{Deserialize, Serialize};

use crate::calibration::{default_free_params, FitOptions, FreeParam, PowerUnit};
use crate::error::{Error, Result};
use crate::lindblad::{EvolveOptions, InitialState};
use crate::model::ModelParams;
use crate::pipeline::PipelineOptions;
use crate::sweep::linspace;

/// Version of the config and artifact layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Points per axis of the full-resolution sweep.
pub const FULL_GRID_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl AxisSpec {
    pub fn values(&self) -> Vec<f64> {
        linspace(self.min, self.max, self.n)
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = self.min.is_finite() && self.max.is_finite() && self.min > 0.0 && self.n >= 1;
        if !ok || (self.n > 1 && self.max <= self.min) {
            return Err(Error::InvalidGrid(format!("{name} axis {}:{}:{} needs 0 < min < max and n >= 1", self.min, self.max, self.n)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Ω₀ axis, THz
    pub omega0: AxisSpec,
    /// τ axis, ps
    pub tau: AxisSpec,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            omega0: AxisSpec { min: 0.01, max: 0.3, n: 20 },
            tau: AxisSpec { min: 10.0, max: 150.0, n: 20 },
        }
    }
}

impl SweepConfig {
    pub fn full_resolution(&self) -> Self {
        SweepConfig {
            omega0: AxisSpec { n: FULL_GRID_POINTS, ..self.omega0 },
            tau: AxisSpec { n: FULL_GRID_POINTS, ..self.tau },
        }
    }

    /// Parses `"o_min:o_max:n,tau_min:tau_max:n"`.
    pub fn parse_grid(spec: &str) -> Result<Self> {
        let axis = |s: &str| -> Result<AxisSpec> {
            let parts: Vec<&str> = s.split(':').map(str::trim).collect();
            let bad = || Error::Config(format!("grid axis `{s}` must look like min:max:n"));
            if parts.len() != 3 {
                return Err(bad());
            }
            Ok(AxisSpec {
                min: parts[0].parse().map_err(|_| bad())?,
                max: parts[1].parse().map_err(|_| bad())?,
                n: parts[2].parse().map_err(|_| bad())?,
            })
        };
        let (o, t) = spec
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("grid `{spec}` must have two comma-separated axes")))?;
        let grid = SweepConfig { omega0: axis(o)?, tau: axis(t)? };
        grid.validate()?;
        Ok(grid)
    }

    fn validate(&self) -> Result<()> {
        self.omega0.validate("omega0")?;
        self.tau.validate("tau")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Parameters to fit; `None` selects the Rabi-fit set with one-decade bounds.
    pub free: Option<Vec<FreeParam>>,
    pub max_evaluations: usize,
    pub lhs_samples: usize,
    pub simplex_evaluations: usize,
    pub polish: bool,
    /// Pulse FWHM of the dataset when the CSV does not state it, ps.
    pub tau: Option<f64>,
    pub power_unit: Option<PowerUnit>,
}

impl Default for FitConfig {
    fn default() -> Self {
        let o = FitOptions::default();
        FitConfig {
            free: None,
            max_evaluations: o.max_evaluations,
            lhs_samples: o.lhs_samples,
            simplex_evaluations: o.simplex_evaluations,
            polish: o.polish,
            tau: None,
            power_unit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContourConfig {
    /// normalized-counts level
    pub level: f64,
}

impl Default for ContourConfig {
    fn default() -> Self {
        ContourConfig { level: 0.32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub params: ModelParams,
    pub solver: EvolveOptions,
    pub initial_state: InitialState,
    /// relative phase of the target Bell state, rad
    pub bell_phase: f64,
    pub seed: u64,
    pub sweep: SweepConfig,
    pub fit: FitConfig,
    pub contour: ContourConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            params: ModelParams::default(),
            solver: EvolveOptions::default(),
            initial_state: InitialState::Ground,
            bell_phase: 0.0,
            seed: 0,
            sweep: SweepConfig::default(),
            fit: FitConfig::default(),
            contour: ContourConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates; absent fields take their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.params.validate()?;
        self.solver.validate()?;
        if !self.bell_phase.is_finite() {
            return Err(Error::Config("bell_phase must be finite".into()));
        }
        self.sweep.validate()?;
        if !(self.contour.level > 0.0 && self.contour.level <= 1.0) {
            return Err(Error::Config(format!("contour level {} must lie in (0, 1]", self.contour.level)));
        }
        if self.fit.max_evaluations == 0 {
            return Err(Error::Config("fit.max_evaluations must be positive".into()));
        }
        if let Some(tau) = self.fit.tau {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::Config(format!("fit.tau must be positive, got {tau}")));
            }
        }
        Ok(())
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions { evolve: self.solver, initial_state: self.initial_state, bell_phase: self.bell_phase }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            seed: self.seed,
            max_evaluations: self.fit.max_evaluations,
            lhs_samples: self.fit.lhs_samples,
            simplex_evaluations: self.fit.simplex_evaluations,
            polish: self.fit.polish,
            evolve: self.solver,
        }
    }

    pub fn free_params(&self) -> Vec<FreeParam> {
        self.fit.free.clone().unwrap_or_else(|| default_free_params(&self.params))
    }
}
