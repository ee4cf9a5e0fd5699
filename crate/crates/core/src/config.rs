//! Experiment configuration: a sectioned TOML file mapping onto every knob
//! the training loop, model builder and safety layer expose.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "ppo")]
    Ppo,
    #[serde(rename = "ppo-lag")]
    PpoLag,
    #[serde(rename = "ppo-lag-shield")]
    PpoLagShield,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::PpoLag => "ppo-lag",
            Algorithm::PpoLagShield => "ppo-lag-shield",
        }
    }

    pub fn uses_safety_layer(&self) -> bool {
        matches!(self, Algorithm::PpoLagShield)
    }

    pub fn uses_lagrangian(&self) -> bool {
        !matches!(self, Algorithm::Ppo)
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Algorithm> {
        match s {
            "ppo" => Ok(Algorithm::Ppo),
            "ppo-lag" => Ok(Algorithm::PpoLag),
            "ppo-lag-shield" => Ok(Algorithm::PpoLagShield),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub name: String,
    pub hazard_count: usize,
    pub hazard_radius: f64,
    pub layout_seed: u64,
    pub circle_radius: f64,
    pub x_limit: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            name: "hazard-goal".into(),
            hazard_count: 3,
            hazard_radius: 0.4,
            layout_seed: 0,
            circle_radius: 1.0,
            x_limit: 1.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SrlSection {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub lambda_lr: f64,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub hidden: usize,
    pub init_log_std: f64,
}

impl Default for SrlSection {
    fn default() -> Self {
        SrlSection {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            lambda_lr: 0.05,
            update_epochs: 40,
            minibatch_size: 2000,
            hidden: 64,
            init_log_std: -0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RomdpSection {
    pub k_s: usize,
    pub cells_per_dim: usize,
    pub default_cost: f64,
    pub min_build_size: usize,
    pub dataset_capacity: usize,
    pub tsne_max_samples: usize,
    pub tsne_iterations: usize,
    pub perplexity: f64,
    pub mapper_epochs: usize,
    /// After the first ten epochs, rebuild every this many epochs;
    /// 0 disables rebuilding entirely.
    pub rebuild_interval: usize,
    pub value_iteration_tolerance: f64,
    pub value_iteration_max_iters: usize,
}

impl Default for RomdpSection {
    fn default() -> Self {
        RomdpSection {
            k_s: 50,
            cells_per_dim: 3,
            default_cost: 0.5,
            min_build_size: 2000,
            dataset_capacity: 100_000,
            tsne_max_samples: 5000,
            tsne_iterations: 500,
            perplexity: 30.0,
            mapper_epochs: 200,
            rebuild_interval: 2,
            value_iteration_tolerance: 1e-4,
            value_iteration_max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetySection {
    /// Episode cost budget d for the multiplier update.
    pub cost_limit: f64,
    /// Immediate cost limit d_s; when absent, cost_limit / horizon.
    pub immediate_limit: Option<f64>,
    /// Future (cost-to-go) limit for action correction; when absent, the
    /// episode budget is reused. The two live on different scales when the
    /// discount makes cost-to-go much smaller than episode sums.
    pub future_limit: Option<f64>,
    /// Pin the layer off for the whole run (transparent wrapper mode).
    pub force_inactive: bool,
    pub deactivate_threshold: f64,
    pub reactivate_threshold: f64,
}

impl Default for SafetySection {
    fn default() -> Self {
        SafetySection {
            cost_limit: 25.0,
            immediate_limit: None,
            future_limit: None,
            force_inactive: false,
            deactivate_threshold: 0.05,
            reactivate_threshold: 0.15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoSection {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

impl Default for PsoSection {
    fn default() -> Self {
        PsoSection {
            particles: 40,
            iterations: 60,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub checkpoint_interval: usize,
    pub export_embeddings: bool,
    pub save_model: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            checkpoint_interval: 10,
            export_embeddings: false,
            save_model: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    /// Training epochs k_e.
    pub epochs: usize,
    /// Timesteps per epoch k_t.
    pub steps_per_epoch: usize,
    pub env: EnvConfig,
    pub srl: SrlSection,
    pub romdp: RomdpSection,
    pub safety: SafetySection,
    pub pso: PsoSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::PpoLagShield,
            seeds: vec![1, 2, 3, 4, 5],
            epochs: 30,
            steps_per_epoch: 20_000,
            env: EnvConfig::default(),
            srl: SrlSection::default(),
            romdp: RomdpSection::default(),
            safety: SafetySection::default(),
            pso: PsoSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(ExperimentConfig, Vec<String>)> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parse and validate; returns the config plus non-fatal warnings.
    pub fn parse(text: &str) -> Result<(ExperimentConfig, Vec<String>)> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        let warnings = cfg.validate()?;
        Ok((cfg, warnings))
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let positives: [(&str, f64); 10] = [
            ("steps_per_epoch", self.steps_per_epoch as f64),
            ("epochs", self.epochs as f64),
            ("srl.gamma", self.srl.gamma),
            ("srl.clip", self.srl.clip),
            ("romdp.k_s", self.romdp.k_s as f64),
            ("romdp.cells_per_dim", self.romdp.cells_per_dim as f64),
            ("safety.cost_limit", self.safety.cost_limit),
            ("pso.particles", self.pso.particles as f64),
            ("pso.iterations", self.pso.iterations as f64),
            (
                "romdp.value_iteration_tolerance",
                self.romdp.value_iteration_tolerance,
            ),
        ];
        for (name, v) in positives {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        if !(self.srl.gamma < 1.0) {
            return Err(Error::Config("srl.gamma must be below 1".into()));
        }
        if self.safety.reactivate_threshold <= self.safety.deactivate_threshold {
            return Err(Error::Config(
                "safety.reactivate_threshold must exceed safety.deactivate_threshold".into(),
            ));
        }
        if self.romdp.dataset_capacity == 0 || self.romdp.min_build_size == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        if let Some(d_s) = self.safety.immediate_limit {
            if !(d_s > 0.0) {
                return Err(Error::Config(
                    "safety.immediate_limit must be positive".into(),
                ));
            }
            if d_s >= self.romdp.default_cost {
                warnings.push(format!(
                    "immediate limit {d_s} is not below the default cost {}; unobserved pairs will look feasible and exploration of unknown actions will not be discouraged",
                    self.romdp.default_cost
                ));
            }
        }
        if let Some(d) = self.safety.future_limit {
            if !(d > 0.0) {
                return Err(Error::Config(
                    "safety.future_limit must be positive".into(),
                ));
            }
        }
        match self.env.name.as_str() {
            "hazard-goal" | "point-circle" => {}
            other => return Err(Error::Config(format!("unknown environment '{other}'"))),
        }
        Ok(warnings)
    }

    /// The immediate limit d_s: configured value, or the budget divided by
    /// the episode horizon.
    pub fn immediate_limit(&self, horizon: usize) -> f64 {
        self.safety
            .immediate_limit
            .unwrap_or(self.safety.cost_limit / horizon as f64)
    }

    /// The future-cost limit d for action correction.
    pub fn future_limit(&self) -> f64 {
        self.safety.future_limit.unwrap_or(self.safety.cost_limit)
    }

    pub fn build_env(&self) -> Result<Box<dyn crate::env::CmdpEnv>> {
        match self.env.name.as_str() {
            "hazard-goal" => {
                let cfg = crate::env::HazardGoalConfig {
                    hazard_count: self.env.hazard_count,
                    hazard_radius: self.env.hazard_radius,
                    layout_seed: self.env.layout_seed,
                    ..Default::default()
                };
                Ok(Box::new(crate::env::HazardGoal::new(cfg)))
            }
            "point-circle" => {
                let cfg = crate::env::PointCircleConfig {
                    circle_radius: self.env.circle_radius,
                    x_limit: self.env.x_limit,
                    ..Default::default()
                };
                Ok(Box::new(crate::env::PointCircle::new(cfg)))
            }
            other => Err(Error::Config(format!("unknown environment '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_fills_defaults() {
        let (cfg, warnings) = ExperimentConfig::parse("algorithm = \"ppo\"\n").unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Ppo);
        assert_eq!(cfg.romdp.k_s, 50);
        assert_eq!(cfg.steps_per_epoch, 20_000);
        assert!(warnings.is_empty());
    }

    #[test]
    fn sectioned_overrides_apply() {
        let text = r#"
algorithm = "ppo-lag-shield"
seeds = [7]
epochs = 3
steps_per_epoch = 1000

[env]
name = "point-circle"

[romdp]
k_s = 10
rebuild_interval = 1

[safety]
cost_limit = 5.0
"#;
        let (cfg, _) = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.env.name, "point-circle");
        assert_eq!(cfg.romdp.k_s, 10);
        assert_eq!(cfg.safety.cost_limit, 5.0);
        assert_eq!(cfg.seeds, vec![7]);
    }

    #[test]
    fn hysteresis_thresholds_validated() {
        let text = "
[safety]
deactivate_threshold = 0.2
reactivate_threshold = 0.1
";
        assert!(ExperimentConfig::parse(text).is_err());
    }

    #[test]
    fn immediate_limit_warning_when_not_below_default_cost() {
        let text = "
[safety]
immediate_limit = 0.9

[romdp]
default_cost = 0.5
";
        let (_, warnings) = ExperimentConfig::parse(text).unwrap();
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn immediate_limit_defaults_to_budget_over_horizon() {
        let (cfg, _) = ExperimentConfig::parse("").unwrap();
        let d_s = cfg.immediate_limit(500);
        assert!((d_s - 25.0 / 500.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_algorithm_and_env_rejected() {
        assert!(ExperimentConfig::parse("algorithm = \"sac\"").is_err());
        assert!(ExperimentConfig::parse("[env]\nname = \"mujoco\"").is_err());
    }
}
