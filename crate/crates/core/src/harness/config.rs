use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::baselines::Method;
use crate::drivesim::{RouteRegistry, ScenarioConfig, SimConfig, SimError, HELD_OUT_ROUTE, TRAINING_ROUTES};
use crate::expert::{ExpertGains, PriorParams};
use crate::sac::SacConfig;

/// Deterministic evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Routes rolled out by `eval`; may include the held-out route.
    pub routes: Vec<String>,
    /// One deterministic rollout per route per evaluation seed.
    pub seeds: Vec<u64>,
    /// Also roll out the sparse and dense experts as reference rows.
    pub expert_rows: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            routes: TRAINING_ROUTES.iter().map(|r| r.to_string()).collect(),
            seeds: vec![1000, 1001, 1002],
            expert_rows: true,
        }
    }
}

/// Everything that determines a run. Archived verbatim (as TOML) beside the
/// results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Training routes, visited round-robin one episode at a time.
    pub routes: Vec<String>,
    pub seeds: Vec<u64>,
    /// Episodes per route per seed.
    pub training_episodes: usize,
    /// Extra directory of route TOML files layered over the built-in set.
    pub route_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Write a resumable checkpoint every this many episodes; 0 disables.
    pub checkpoint_every: usize,
    /// Number of SAC agents in the composite policy's ensemble.
    pub ensemble_size: usize,
    /// One replay buffer for all ensemble members. When false, episode `e`
    /// goes only to member `e mod ensemble_size`.
    pub share_replay: bool,
    /// Weight of the KL term for the `kl` method.
    pub kl_beta: f64,
    /// Multiplier on the actor sample for the `residual` method.
    pub residual_scale: f64,
    /// Keep every n-th update in the loss log.
    pub loss_log_every: usize,
    pub sim: SimConfig,
    pub scenario: ScenarioConfig,
    pub prior: PriorParams,
    pub expert: ExpertGains,
    pub sac: SacConfig,
    pub evaluation: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Sirl,
            routes: TRAINING_ROUTES.iter().map(|r| r.to_string()).collect(),
            seeds: vec![0, 1, 2],
            training_episodes: 40,
            route_dir: None,
            output_dir: PathBuf::from("runs"),
            checkpoint_every: 0,
            ensemble_size: 3,
            share_replay: true,
            kl_beta: 0.1,
            residual_scale: 1.0,
            loss_log_every: 10,
            sim: SimConfig::default(),
            scenario: ScenarioConfig::default(),
            prior: PriorParams::default(),
            expert: ExpertGains::default(),
            sac: SacConfig::default(),
            evaluation: EvalConfig::default(),
        }
    }
}

fn sim_errors(r: Result<(), SimError>, errors: &mut Vec<String>) {
    match r {
        Ok(()) => {}
        Err(SimError::InvalidScenario(list)) => errors.extend(list),
        Err(e) => errors.push(e.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::ConfigParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Route registry with the built-in routes plus `route_dir`, if set.
    pub fn registry(&self) -> Result<RouteRegistry, HarnessError> {
        let mut reg = RouteRegistry::builtin();
        if let Some(dir) = &self.route_dir {
            reg.load_dir(dir)?;
        }
        Ok(reg)
    }

    /// SHA-256 over the TOML form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks every field and the train/held-out split. Returns all problems
    /// at once.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.routes.iter().any(|r| r == HELD_OUT_ROUTE) {
            return Err(HarnessError::HeldOutRoute(HELD_OUT_ROUTE.to_string()));
        }
        let mut errors = Vec::new();
        if self.routes.is_empty() {
            errors.push("routes must not be empty".into());
        }
        if self.seeds.is_empty() {
            errors.push("seeds must not be empty".into());
        }
        if self.method.learns() && self.training_episodes == 0 {
            errors.push("training_episodes must be at least 1".into());
        }
        if self.ensemble_size == 0 {
            errors.push("ensemble_size must be at least 1".into());
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            errors.push(format!("kl_beta must be >= 0 (got {})", self.kl_beta));
        }
        if !self.residual_scale.is_finite() {
            errors.push("residual_scale must be finite".into());
        }
        if self.loss_log_every == 0 {
            errors.push("loss_log_every must be at least 1".into());
        }
        if self.evaluation.seeds.is_empty() {
            errors.push("evaluation.seeds must not be empty".into());
        }
        sim_errors(self.sim.validate(), &mut errors);
        sim_errors(self.scenario.validate(), &mut errors);
        self.prior.validate(&mut errors);
        self.expert.validate(&mut errors);
        self.sac.validate(&mut errors);
        match self.registry() {
            Ok(reg) => {
                for r in self.routes.iter().chain(&self.evaluation.routes) {
                    if reg.get(r).is_err() {
                        errors.push(format!("unknown route `{r}`"));
                    }
                }
            }
            Err(e) => errors.push(e.to_string()),
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::InvalidConfig(errors))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = ExperimentConfig::from_toml_str("method = \"kl\"\n[prior]\nsigma_psi = 0.05\n").unwrap();
        assert_eq!(c.method, Method::Kl);
        assert_eq!(c.prior.sigma_psi, 0.05);
        assert_eq!(c.prior.anchor_spacing, 5.0);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("methd = \"sirl\"\n"),
            Err(HarnessError::ConfigParse(_))
        ));
    }

    #[test]
    fn held_out_route_is_refused_for_training() {
        let c = ExperimentConfig {
            routes: vec!["route00".into(), HELD_OUT_ROUTE.into()],
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(HarnessError::HeldOutRoute(_))));
    }

    #[test]
    fn all_problems_reported_together() {
        let mut c = ExperimentConfig {
            seeds: vec![],
            kl_beta: -1.0,
            ..Default::default()
        };
        c.prior.sigma_psi = 0.0;
        c.sac.gamma = 2.0;
        c.routes.push("nowhere".into());
        let Err(HarnessError::InvalidConfig(errs)) = c.validate() else {
            panic!("expected invalid config");
        };
        for key in ["seeds", "kl_beta", "sigma_psi", "gamma", "nowhere"] {
            assert!(errs.iter().any(|e| e.contains(key)), "{key} missing from {errs:?}");
        }
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..Default::default()
        };
        let c = ExperimentConfig {
            kl_beta: 0.2,
            ..Default::default()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
