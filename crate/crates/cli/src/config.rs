//! Run configuration: one JSON file drives a whole experiment.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use recovery_core::community::TestbedConfig;
use recovery_core::hazard::{GmpeParams, ScenarioConfig};
use recovery_core::mdp::RewardTiming;
use recovery_core::solver::{BasePolicy, RolloutConfig};

use crate::formats;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    /// Every random stream in the run derives from this.
    pub master_seed: u64,
    #[serde(default = "default_replications")]
    pub replications: u32,
    /// Output directory; created if missing.
    pub outputs: PathBuf,
    #[serde(default)]
    pub policy: PolicySelection,
    /// Calendar days at which synthetic step-function snapshot rows are
    /// added to the recovery curve.
    #[serde(default = "default_checkpoints")]
    pub checkpoint_days: Vec<u64>,
    pub community: CommunitySource,
    #[serde(default)]
    pub scenario: ScenarioSection,
    /// Path to the archetype catalog file (fragility + repair models).
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverSection,
}

fn default_replications() -> u32 {
    1
}

fn default_checkpoints() -> Vec<u64> {
    vec![0, 100, 600]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommunitySource {
    /// Generate a synthetic testbed from parameters.
    Generate(TestbedConfig),
    /// Load a community file.
    Load(PathBuf),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
#[clap(rename_all = "lower")]
pub enum PolicySelection {
    Base,
    Rollout,
    #[default]
    Both,
}

impl PolicySelection {
    pub fn runs_base(self) -> bool {
        matches!(self, PolicySelection::Base | PolicySelection::Both)
    }

    pub fn runs_rollout(self) -> bool {
        matches!(self, PolicySelection::Rollout | PolicySelection::Both)
    }
}

/// Scenario earthquake parameters plus an optional fixed hazard seed
/// (derived from the master seed when absent).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub magnitude: f64,
    pub epicenter: (f64, f64),
    pub gmpe: GmpeParams,
    pub seed: Option<u64>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let core = ScenarioConfig::default();
        ScenarioSection {
            magnitude: core.magnitude,
            epicenter: core.epicenter,
            gmpe: core.gmpe,
            seed: None,
        }
    }
}

impl ScenarioSection {
    pub fn to_core(&self) -> ScenarioConfig {
        ScenarioConfig {
            magnitude: self.magnitude,
            epicenter: self.epicenter,
            gmpe: self.gmpe,
        }
    }
}

/// Planner parameters plus the reward-timing switch and an optional fixed
/// solver seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub gamma: f64,
    pub horizon: Option<u32>,
    pub dispersion_target: f64,
    pub n_mc_min: u32,
    pub n_mc_max: u32,
    pub base_policy: BasePolicy,
    pub candidate_cap: u32,
    pub reward_timing: RewardTiming,
    pub seed: Option<u64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let core = RolloutConfig::default();
        SolverSection {
            gamma: core.gamma,
            horizon: core.horizon,
            dispersion_target: core.dispersion_target,
            n_mc_min: core.n_mc_min,
            n_mc_max: core.n_mc_max,
            base_policy: core.base_policy,
            candidate_cap: core.candidate_cap,
            reward_timing: RewardTiming::default(),
            seed: None,
        }
    }
}

impl SolverSection {
    pub fn to_core(&self) -> RolloutConfig {
        RolloutConfig {
            gamma: self.gamma,
            horizon: self.horizon,
            dispersion_target: self.dispersion_target,
            n_mc_min: self.n_mc_min,
            n_mc_max: self.n_mc_max,
            base_policy: self.base_policy,
            candidate_cap: self.candidate_cap,
        }
    }
}

impl RunConfig {
    /// Parse a config file; parse errors carry line/column context.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))
    }
}

/// Check every config invariant without running; returns the full list of
/// violations (empty when the config is runnable).
pub fn validate_config(config: &RunConfig, config_dir: &Path) -> Vec<String> {
    let mut violations = Vec::new();

    if config.replications < 1 {
        violations.push("replications: must be at least 1".to_string());
    }
    if let Err(e) = config.solver.to_core().validate() {
        violations.push(format!("solver: {e}"));
    }
    if let Err(e) = config.scenario.to_core().validate() {
        violations.push(format!("scenario: {e}"));
    }

    match &config.community {
        CommunitySource::Generate(testbed) => {
            if let Err(e) = testbed.validate() {
                violations.push(format!("community.generate: {e}"));
            }
        }
        CommunitySource::Load(path) => {
            let resolved = resolve(config_dir, path);
            match formats::load_community(&resolved) {
                Ok(_) => {}
                Err(e) => violations.push(format!("community.load: {e:#}")),
            }
        }
    }

    match &config.catalog {
        None => violations.push("catalog: path missing".to_string()),
        Some(path) => {
            let resolved = resolve(config_dir, path);
            if let Err(e) = formats::load_catalog(&resolved) {
                violations.push(format!("catalog: {e:#}"));
            }
        }
    }

    if config.outputs.as_os_str().is_empty() {
        violations.push("outputs: path missing".to_string());
    } else if let Err(e) = fs::create_dir_all(&config.outputs) {
        violations.push(format!(
            "outputs: directory {} not creatable: {e}",
            config.outputs.display()
        ));
    }

    violations
}

/// Paths inside a config are relative to the config file's directory.
pub fn resolve(config_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        config_dir.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_constants() {
        let solver = SolverSection::default();
        assert_eq!(solver.gamma, 0.99);
        assert_eq!(solver.dispersion_target, 0.1);
        let scenario = ScenarioSection::default();
        assert_eq!(scenario.magnitude, 6.9);
        let (x, y) = scenario.epicenter;
        assert_eq!((x * x + y * y).sqrt(), 12.0);
    }

    #[test]
    fn minimal_config_parses() {
        let json = r#"{
            "master_seed": 7,
            "outputs": "out",
            "community": {"generate": {"grid_rows": 2, "grid_cols": 2, "n_buildings": 10, "total_population": 30}},
            "catalog": "catalog.json"
        }"#;
        let config: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(config.replications, 1);
        assert_eq!(config.policy, PolicySelection::Both);
        assert_eq!(config.checkpoint_days, vec![0, 100, 600]);
        assert_eq!(config.solver.gamma, 0.99);
    }

    #[test]
    fn gamma_violation_names_field_and_bound() {
        let json = r#"{
            "master_seed": 7,
            "outputs": "out",
            "community": {"generate": {}},
            "catalog": null,
            "solver": {"gamma": 1.5}
        }"#;
        let config: RunConfig = serde_json::from_str(json).unwrap();
        let dir = std::env::temp_dir();
        let violations = validate_config(&config, &dir);
        assert!(
            violations.iter().any(|v| v.contains("gamma") && v.contains("(0, 1)")),
            "violations: {violations:?}"
        );
        assert!(violations.iter().any(|v| v.contains("catalog")));
    }
}
