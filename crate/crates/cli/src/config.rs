use std::path::PathBuf;

use eamac_core::dtmc::CoupledOptions;
use eamac_core::optimizer::{Budget, ParamGrid};
use eamac_core::sim::{DEFAULT_REPLICATIONS, DEFAULT_SLOTS, DEFAULT_WARMUP};
use eamac_core::{PolicyConfig, SimConfig, SystemParams};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub num_slots: u64,
    pub warmup_slots: u64,
    pub num_replications: u32,
    pub seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            num_slots: DEFAULT_SLOTS,
            warmup_slots: DEFAULT_WARMUP,
            num_replications: DEFAULT_REPLICATIONS,
            seed: 0,
        }
    }
}

impl SimSettings {
    pub fn budget(&self) -> Budget {
        Budget {
            num_slots: self.num_slots,
            warmup_slots: self.warmup_slots,
            num_replications: self.num_replications,
        }
    }

    pub fn sim_config(&self, params: SystemParams, policy: PolicyConfig) -> SimConfig {
        SimConfig {
            num_slots: self.num_slots,
            warmup_slots: self.warmup_slots,
            num_replications: self.num_replications,
            seed: self.seed,
            ..SimConfig::new(params, policy)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub path: Option<PathBuf>,
    pub format: Option<Format>,
}

/// One policy in a comparison: either fixed, or optimized afresh at every D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareEntry {
    /// Row label; defaults to the policy kind.
    pub label: Option<String>,
    pub policy: Option<PolicyConfig>,
    pub optimize: Option<ParamGrid>,
}

impl CompareEntry {
    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match (&self.policy, &self.optimize) {
            (Some(p), _) => p.label(),
            (None, Some(g)) => family_label(g),
            (None, None) => "unnamed".into(),
        }
    }
}

/// Label of the policies a grid generates, matching [`PolicyConfig::label`].
pub fn family_label(grid: &ParamGrid) -> String {
    grid.points()
        .first()
        .map(|p| p.label())
        .unwrap_or_else(|| format!("{:?}", grid.family).to_lowercase())
}

/// Experiment description read from the `--config` file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub params: SystemParams,
    pub policy: Option<PolicyConfig>,
    #[serde(default)]
    pub sim: SimSettings,
    /// Network sizes to sweep or compare over.
    pub sweep: Option<Vec<u32>>,
    pub grid: Option<ParamGrid>,
    pub policies: Option<Vec<CompareEntry>>,
    #[serde(default)]
    pub analysis: CoupledOptions,
    #[serde(default)]
    pub output: OutputSettings,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.params.validate()?;
        if cfg.sim.num_slots == 0 {
            return Err(CliError::Config("sim.num_slots: must be at least 1".into()));
        }
        if cfg.sim.num_replications == 0 {
            return Err(CliError::Config("sim.num_replications: must be at least 1".into()));
        }
        Ok(cfg)
    }

    /// Apply `--seed`: the simulation seed and every grid seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        if let Some(g) = self.grid.as_mut() {
            g.seed = seed;
        }
        for e in self.policies.iter_mut().flatten() {
            if let Some(g) = e.optimize.as_mut() {
                g.seed = seed;
            }
        }
    }

    pub fn require_policy(&self) -> Result<PolicyConfig, CliError> {
        let policy = self
            .policy
            .ok_or_else(|| CliError::Config("policy: required by this command".into()))?;
        policy.validate(&self.params)?;
        Ok(policy)
    }

    pub fn require_grid(&self) -> Result<&ParamGrid, CliError> {
        self.grid
            .as_ref()
            .ok_or_else(|| CliError::Config("grid: required by this command".into()))
    }

    /// The sweep list, or the single configured network size.
    pub fn device_counts(&self) -> Result<Vec<u32>, CliError> {
        match &self.sweep {
            Some(ds) if ds.is_empty() => Err(CliError::Config("sweep: must list at least one D".into())),
            Some(ds) if ds.contains(&0) => Err(CliError::Config("sweep: every D must be >= 1".into())),
            Some(ds) => Ok(ds.clone()),
            None => Ok(vec![self.params.num_devices]),
        }
    }

    pub fn require_policies(&self) -> Result<&[CompareEntry], CliError> {
        let entries = self.policies.as_deref().unwrap_or_default();
        if entries.len() < 2 {
            return Err(CliError::Config(format!(
                "policies: compare requires at least 2 policies, got {}",
                entries.len()
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            match (&e.policy, &e.optimize) {
                (Some(p), None) => p.validate(&self.params)?,
                (None, Some(_)) => {}
                _ => {
                    return Err(CliError::Config(format!(
                        "policies[{i}]: give exactly one of `policy` or `optimize`"
                    )))
                }
            }
        }
        Ok(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use eamac_core::ProbFunction;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::parse(r#"{"policy":{"kind":"none"}}"#).unwrap();
        assert_eq!(cfg.params, SystemParams::default());
        assert_eq!(cfg.sim, SimSettings::default());
        assert_eq!(cfg.device_counts().unwrap(), vec![50]);
    }

    #[test]
    fn partial_params_fill_in() {
        let cfg = ExperimentConfig::parse(
            r#"{"params":{"num_devices":30},
                "policy":{"kind":"proposed","alpha":0.3,"tau":0.8,"prob":{"type":"linear","c":2.0}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.params.num_devices, 30);
        assert_eq!(cfg.params.battery_capacity, 100);
        assert_eq!(
            cfg.require_policy().unwrap(),
            PolicyConfig::Proposed {
                alpha: 0.3,
                tau: 0.8,
                prob: ProbFunction::Linear { c: 2.0 }
            }
        );
    }

    #[test]
    fn invalid_battery_names_the_field() {
        let err = ExperimentConfig::parse(r#"{"params":{"battery_capacity":5,"tx_cost":10}}"#)
            .unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("battery_capacity must exceed energy_floor + tx_cost"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = ExperimentConfig::parse(r#"{"parms":{}}"#).unwrap_err();
        assert!(err.to_string().contains("parms"));
    }

    #[test]
    fn compare_needs_two_policies() {
        let cfg = ExperimentConfig::parse(r#"{"policies":[{"policy":{"kind":"none"}}]}"#).unwrap();
        let err = cfg.require_policies().unwrap_err();
        assert!(err.to_string().contains("at least 2"));
        let both = ExperimentConfig::parse(
            r#"{"policies":[{"policy":{"kind":"none"},"optimize":{"family":"adra"}},
                            {"policy":{"kind":"none"}}]}"#,
        )
        .unwrap();
        assert!(both.require_policies().is_err());
    }

    #[test]
    fn seed_override_reaches_grids() {
        let mut cfg = ExperimentConfig::parse(
            r#"{"grid":{"family":"adra"},
                "policies":[{"optimize":{"family":"elliptical"}},{"policy":{"kind":"none"}}]}"#,
        )
        .unwrap();
        cfg.override_seed(42);
        assert_eq!(cfg.sim.seed, 42);
        assert_eq!(cfg.grid.as_ref().unwrap().seed, 42);
        assert_eq!(cfg.policies.as_ref().unwrap()[0].optimize.as_ref().unwrap().seed, 42);
        assert_eq!(cfg.policies.as_ref().unwrap()[0].label(), "proposed_elliptical");
    }
}
