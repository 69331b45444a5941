//! Run configuration: one JSON document covering the device model, the
//! channel grid, the optimizer, and campaign execution.
//!
//! Every field has a default, so an empty `{}` file is a complete
//! configuration and a file only needs to name the values it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::campaign::CampaignConfig;
use crate::channels::{GridConfig, SetConfig, SweepConfig};
use crate::optimizer::OptimizerConfig;
use crate::plant::PlantConfig;
use crate::{Error, Result};

/// Top-level configuration for a simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Run label, used to name the output directory.
    pub name: String,
    /// Seed for measurement noise and per-transition random streams.
    pub seed: u64,
    /// Seed for fabrication disorder; changes device behaviour, not noise.
    pub disorder_seed: u64,
    /// Parent directory for run outputs.
    pub out_dir: PathBuf,
    pub plant: PlantConfig,
    pub optimizer: OptimizerConfig,
    pub grid: GridConfig,
    pub set: SetConfig,
    pub sweep: SweepConfig,
    pub campaign: CampaignConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            seed: 1,
            disorder_seed: 7,
            out_dir: PathBuf::from("out"),
            plant: PlantConfig::default(),
            optimizer: OptimizerConfig::default(),
            grid: GridConfig::default(),
            set: SetConfig::default(),
            sweep: SweepConfig::default(),
            campaign: CampaignConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a configuration from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Directory all outputs of this run land in. Derived from the label
    /// and seed only, so reruns overwrite rather than accumulate.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(format!("{}-seed{}", self.name, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_a_complete_config() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.name, "run");
        assert_eq!(cfg.grid.count, 122);
        assert_eq!(cfg.optimizer.n_updates, 10);
    }

    #[test]
    fn partial_overrides_leave_other_fields_at_default() {
        let cfg = RunConfig::from_json(
            r#"{"seed": 42, "optimizer": {"mu": 0.001}, "grid": {"count": 10}}"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.optimizer.mu, 0.001);
        assert_eq!(cfg.optimizer.n_updates, 10);
        assert_eq!(cfg.grid.count, 10);
        assert_eq!(cfg.disorder_seed, 7);
    }

    #[test]
    fn malformed_json_reports_a_config_error() {
        assert!(matches!(
            RunConfig::from_json("{nope"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn run_dir_depends_only_on_name_and_seed() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.run_dir(), PathBuf::from("out/run-seed1"));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
