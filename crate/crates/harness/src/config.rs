//! Experiment configuration, read from one JSON file plus flag overrides.

use std::path::Path;

use agnosticq_core::{GenParams, NoiseFamily};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Environment variable holding the master seed.
pub const SEED_ENV: &str = "AGNOSTICQ_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Linear,
    General,
    Stochastic,
    Eluder,
    Verify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    Finite,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceParams {
    /// Candidate level widths; each trial draws a horizon in
    /// `horizon_range` and takes widths cyclically from this list.
    pub level_widths: Vec<usize>,
    pub horizon_range: Option<(usize, usize)>,
    pub min_actions: usize,
    pub max_actions: usize,
    /// Target optimality gap; `rho_range` draws one per trial instead.
    pub rho_target: f64,
    pub rho_range: Option<(f64, f64)>,
    pub value_ceiling: f64,
    pub class: ClassKind,
    pub d: usize,
    pub d_range: Option<(usize, usize)>,
    pub class_size: usize,
    pub delta_target: f64,
    /// When set, the class is generated at this fraction of the largest δ
    /// the relevant premise admits, and `delta_target` is ignored.
    pub premise_fraction: Option<f64>,
    pub noise: Option<NoiseFamily>,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self {
            level_widths: vec![1, 2, 2],
            horizon_range: None,
            min_actions: 2,
            max_actions: 2,
            rho_target: 0.25,
            rho_range: None,
            value_ceiling: 1.0,
            class: ClassKind::Finite,
            d: 4,
            d_range: None,
            class_size: 4,
            delta_target: 0.0,
            premise_fraction: None,
            noise: None,
        }
    }
}

impl InstanceParams {
    pub fn gen_params(&self, widths: Vec<usize>, rho: f64) -> GenParams {
        GenParams {
            level_widths: widths,
            min_actions: self.min_actions,
            max_actions: self.max_actions,
            target_gap: rho,
            value_ceiling: self.value_ceiling,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    /// Gap handed to the agent; the realized gap when absent.
    pub rho: Option<f64>,
    /// Approximation error handed to the agent; the realized error when absent.
    pub delta: Option<f64>,
    /// Reward accuracy; `ρ/(24√2·dim_E)` when absent.
    pub delta_r: Option<f64>,
    pub p: f64,
    /// Tightened dataset constant; gates the premise and adds the `c·dim_E` bound.
    pub c: Option<f64>,
    /// Natural log when absent.
    pub log_base: Option<f64>,
    pub memoize: bool,
    /// Eluder dimension supplied directly instead of computed.
    pub dim_e: Option<usize>,
    /// For linear classes without `dim_e`: `⌈k·d·ln(1/ε)⌉`.
    pub dim_e_constant: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            rho: None,
            delta: None,
            delta_r: None,
            p: 0.1,
            c: None,
            log_base: None,
            memoize: false,
            dim_e: None,
            dim_e_constant: 1.0,
        }
    }
}

impl AgentParams {
    pub fn log_base(&self) -> f64 {
        self.log_base.unwrap_or(std::f64::consts::E)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EluderParams {
    pub max_domain: usize,
    pub min_class: usize,
    pub max_class: usize,
    /// Both thresholds of a trial are drawn from this range.
    pub eps_range: (f64, f64),
    /// Values are drawn from `{0, 1/levels, ..., 1}` so that ties occur.
    pub value_levels: u32,
}

impl Default for EluderParams {
    fn default() -> Self {
        Self { max_domain: 10, min_class: 2, max_class: 6, eps_range: (0.01, 0.5), value_levels: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyParams {
    pub max_dim: usize,
    pub draws_per_trial: usize,
    pub alpha_range: (f64, f64),
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self { max_dim: 8, draws_per_trial: 100, alpha_range: (1e-4, 10.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub master_seed: u64,
    pub trials: usize,
    /// Shared instance for every trial; trial seeds then drive only the
    /// reward stream.
    pub instance_seed: Option<u64>,
    pub instance: InstanceParams,
    pub agent: AgentParams,
    pub eluder: EluderParams,
    pub verify: VerifyParams,
    /// Success-rate threshold for stochastic sweeps.
    pub min_success_rate: f64,
    pub parallelism: Option<usize>,
    pub budget_ms: Option<u64>,
    /// Records wall-clock time per row; reports are then not reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Linear,
            master_seed: 0,
            trials: 10,
            instance_seed: None,
            instance: InstanceParams::default(),
            agent: AgentParams::default(),
            eluder: EluderParams::default(),
            verify: VerifyParams::default(),
            min_success_rate: 0.85,
            parallelism: None,
            budget_ms: None,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    /// Replaces the master seed with `AGNOSTICQ_SEED` when it is set.
    pub fn apply_seed_env(&mut self) -> Result<(), HarnessError> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.master_seed = raw
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={raw} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.master_seed.wrapping_add(trial as u64)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        let inst = &self.instance;
        if self.trials == 0 {
            return bad("trials must be positive");
        }
        if inst.level_widths.is_empty() || inst.level_widths.contains(&0) {
            return bad("level_widths must be non-empty and positive");
        }
        if let Some((lo, hi)) = inst.horizon_range {
            if lo == 0 || lo > hi {
                return bad("horizon_range must satisfy 1 <= lo <= hi");
            }
        }
        if let Some((lo, hi)) = inst.rho_range {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return bad("rho_range must lie in (0, 1]");
            }
        }
        if let Some((lo, hi)) = inst.d_range {
            if lo < 2 || lo > hi {
                return bad("d_range must satisfy 2 <= lo <= hi");
            }
        }
        if let Some(f) = inst.premise_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad("premise_fraction must lie in (0, 1]");
            }
        }
        if let (Some(rho), Some(delta)) = (self.agent.rho, self.agent.delta) {
            if delta >= rho / 2.0 {
                return bad("delta must be below rho/2");
            }
        }
        if let Some(c) = self.agent.c {
            if !(c > 1.0) {
                return bad("constant c must exceed 1");
            }
        }
        if !(self.agent.p > 0.0 && self.agent.p < 1.0) {
            return bad("p must lie in (0, 1)");
        }
        if let Some(b) = self.agent.log_base {
            if !(b > 1.0) {
                return bad("log base must exceed 1");
            }
        }
        if inst.d < 2 && inst.d_range.is_none() && (self.mode == Mode::Linear || inst.class == ClassKind::Linear) {
            return bad("feature dimension d must be at least 2");
        }
        let el = &self.eluder;
        if self.mode == Mode::Eluder
            && (el.max_domain == 0 || el.min_class == 0 || el.min_class > el.max_class || el.value_levels == 0)
        {
            return bad("eluder parameters need positive domain, class range and value levels");
        }
        if self.mode == Mode::Eluder && !(el.eps_range.0 > 0.0 && el.eps_range.0 < el.eps_range.1) {
            return bad("eps_range must satisfy 0 < lo < hi");
        }
        if self.mode == Mode::Verify && (self.verify.max_dim == 0 || self.verify.draws_per_trial == 0) {
            return bad("verify parameters must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"mode": "general", "instance": {"class_size": 3}}"#).unwrap();
        assert_eq!(cfg.mode, Mode::General);
        assert_eq!(cfg.instance.class_size, 3);
        assert_eq!(cfg.instance.level_widths, vec![1, 2, 2]);
        assert_eq!(cfg.min_success_rate, 0.85);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_large_delta() {
        let mut cfg = ExperimentConfig::default();
        cfg.agent.rho = Some(0.2);
        cfg.agent.delta = Some(0.1);
        assert!(cfg.validate().is_err());
        cfg.agent.delta = Some(0.05);
        cfg.validate().unwrap();
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.instance.noise = Some(NoiseFamily::TwoPoint { half_width: 0.1 });
        cfg.agent.c = Some(2.0);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
