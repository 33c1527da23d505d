//! Declarative run configuration: a single JSON-compatible tree describing
//! the environment, the learner's model classes, and the schedule knobs.
//! The sha256 of the canonical serialization identifies a config in every
//! output file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::divergence::Metric;
use crate::envs::{
    make_active_learning, make_constrained_bandit, make_hypothesis_test, make_risk_aware,
    EnvironmentSpec, NoiseKind,
};
use crate::error::{Error, Result};
use crate::models::{DensityTable, FiniteDensityClass, GaussianLinearClass, ThetaSet};
use crate::oracle::{covering_grid, EstClass};
use crate::policy::BetaSchedule;

pub const SCHEMA_VERSION: u32 = 1;

/// True-environment description, one variant per reduction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    ConstrainedBandit {
        reward_means: Vec<Vec<f64>>,
        cost_means: Vec<Vec<f64>>,
        noise: NoiseKind,
        tau: f64,
        safe_action: usize,
    },
    RiskAware {
        reward_laws: DensityTable,
        variance_threshold: f64,
        safe_action: usize,
    },
    HypothesisTest {
        prior_y0: Vec<f64>,
        alpha: f64,
    },
    ActiveLearning {
        label_prior_y1: Vec<f64>,
        losses: Vec<[f64; 2]>,
        query_costs: Vec<Vec<f64>>,
        budget: f64,
    },
}

impl EnvConfig {
    pub fn build(&self) -> Result<EnvironmentSpec> {
        match self {
            EnvConfig::ConstrainedBandit {
                reward_means,
                cost_means,
                noise,
                tau,
                safe_action,
            } => make_constrained_bandit(reward_means, cost_means, *noise, *tau, *safe_action),
            EnvConfig::RiskAware {
                reward_laws,
                variance_threshold,
                safe_action,
            } => make_risk_aware(reward_laws.clone(), *variance_threshold, *safe_action),
            EnvConfig::HypothesisTest { prior_y0, alpha } => {
                make_hypothesis_test(prior_y0, *alpha)
            }
            EnvConfig::ActiveLearning {
                label_prior_y1,
                losses,
                query_costs,
                budget,
            } => make_active_learning(label_prior_y1, losses, query_costs, *budget),
        }
    }
}

/// A candidate model class for one side of the learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassConfig {
    /// Finite Bernoulli class given by mean tables `means[m][x][a]`.
    BernoulliMeans { means: Vec<Vec<Vec<f64>>> },
    /// Finite class of explicit density tables.
    Tables { members: Vec<DensityTable> },
    /// Gaussian linear-mean class materialized on a parameter mesh: feature
    /// rows in context-major order, a theta box or list, and the round index
    /// the mesh fineness is pinned to. The engine works over the resulting
    /// finite table list.
    GaussianLinear {
        n_contexts: usize,
        n_actions: usize,
        feature_dim: usize,
        features: Vec<Vec<f64>>,
        sigma: f64,
        sigma_bounds: (f64, f64),
        thetas: ThetaSet,
        mesh_round: usize,
    },
}

impl ClassConfig {
    pub fn build(&self) -> Result<Vec<DensityTable>> {
        match self {
            ClassConfig::BernoulliMeans { means } => Ok(FiniteDensityClass::from_bernoulli_means(
                means,
            )?
            .members()
            .to_vec()),
            ClassConfig::Tables { members } => {
                Ok(FiniteDensityClass::new(members.clone())?.members().to_vec())
            }
            ClassConfig::GaussianLinear {
                n_contexts,
                n_actions,
                feature_dim,
                features,
                sigma,
                sigma_bounds,
                thetas,
                mesh_round,
            } => {
                let map = crate::models::FeatureMap::new(
                    *n_contexts,
                    *n_actions,
                    *feature_dim,
                    features.clone(),
                )?;
                let class = GaussianLinearClass::new(map, *sigma, *sigma_bounds, thetas.clone())?;
                let mesh = covering_grid(thetas, class.l2_lipschitz(), *mesh_round)?;
                mesh.iter().map(|theta| class.table(theta)).collect()
            }
        }
    }
}

/// Everything one experiment needs, minus the seed that `run_one` takes
/// separately so sweeps can share a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default = "default_label")]
    pub label: String,
    pub env: EnvConfig,
    pub f_class: ClassConfig,
    pub g_class: ClassConfig,
    /// Divergence metering the constraint confidence set.
    pub conf_metric: Metric,
    pub delta: f64,
    /// Total rounds T, warm-up included; at least the action count.
    pub horizon: usize,
    pub simplex_resolution: usize,
    /// Exploration schedule; omitted means finite with the F cardinality.
    #[serde(default)]
    pub beta: Option<BetaSchedule>,
    /// Confidence radius class for G; omitted means finite cardinality.
    #[serde(default)]
    pub est_class_g: Option<EstClass>,
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_label() -> String {
    "run".into()
}

fn default_replications() -> usize {
    1
}

impl RunConfig {
    /// Field-level checks that need no environment construction.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config {
                field: "schema_version".into(),
                detail: format!(
                    "got {}, this build reads schema {SCHEMA_VERSION}",
                    self.schema_version
                ),
            });
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config {
                field: "delta".into(),
                detail: format!("{} outside (0, 1)", self.delta),
            });
        }
        if self.replications == 0 {
            return Err(Error::Config {
                field: "replications".into(),
                detail: "need at least one replication".into(),
            });
        }
        if self.simplex_resolution == 0 {
            return Err(Error::Config {
                field: "simplex_resolution".into(),
                detail: "grid resolution must be positive".into(),
            });
        }
        if self.horizon == 0 {
            return Err(Error::Config {
                field: "horizon".into(),
                detail: "need at least one round".into(),
            });
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// sha256 of the canonical (struct-ordered) JSON serialization, hex-encoded.
pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serialization is infallible");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// The template `--print-config` emits: a small two-context bandit with
/// four-member classes containing the truth.
pub fn default_config() -> RunConfig {
    RunConfig {
        schema_version: SCHEMA_VERSION,
        label: "bandit-demo".into(),
        env: EnvConfig::ConstrainedBandit {
            reward_means: vec![vec![0.9, 0.6, 0.1], vec![0.2, 0.8, 0.5]],
            cost_means: vec![vec![0.8, 0.4, 0.0], vec![0.9, 0.6, 0.0]],
            noise: NoiseKind::Bernoulli,
            tau: 0.5,
            safe_action: 2,
        },
        f_class: ClassConfig::BernoulliMeans {
            means: vec![
                vec![vec![0.9, 0.6, 0.1], vec![0.2, 0.8, 0.5]],
                vec![vec![0.6, 0.9, 0.1], vec![0.8, 0.2, 0.5]],
                vec![vec![0.5, 0.5, 0.5], vec![0.5, 0.5, 0.5]],
                vec![vec![0.3, 0.7, 0.2], vec![0.4, 0.6, 0.3]],
            ],
        },
        g_class: ClassConfig::BernoulliMeans {
            means: vec![
                vec![vec![0.8, 0.4, 0.0], vec![0.9, 0.6, 0.0]],
                vec![vec![0.4, 0.8, 0.0], vec![0.6, 0.9, 0.0]],
                vec![vec![0.5, 0.5, 0.0], vec![0.5, 0.5, 0.0]],
                vec![vec![0.7, 0.3, 0.0], vec![0.8, 0.2, 0.0]],
            ],
        },
        conf_metric: Metric::Hellinger,
        delta: 0.1,
        horizon: 200,
        simplex_resolution: 50,
        beta: None,
        est_class_g: None,
        seed: 1,
        replications: 20,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_validates() {
        let cfg = default_config();
        cfg.validate().unwrap();
        let text = cfg.to_json_pretty().unwrap();
        let back = RunConfig::from_json_str(&text).unwrap();
        assert_eq!(cfg, back);
        cfg.env.build().unwrap();
        assert_eq!(cfg.f_class.build().unwrap().len(), 4);
        assert_eq!(cfg.g_class.build().unwrap().len(), 4);
    }

    #[test]
    fn hash_is_deterministic_and_field_sensitive() {
        let cfg = default_config();
        let h1 = config_hash(&cfg);
        let h2 = config_hash(&cfg);
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(h1, config_hash(&other));
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = default_config();
        cfg.delta = 1.5;
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "delta"),
            other => panic!("expected config error, got {other:?}"),
        }
        let mut cfg = default_config();
        cfg.schema_version = 99;
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        let mut cfg = default_config();
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&default_config().to_json_pretty().unwrap()).unwrap();
        value["mystery_knob"] = serde_json::json!(3);
        let text = serde_json::to_string(&value).unwrap();
        assert!(RunConfig::from_json_str(&text).is_err());
    }

    #[test]
    fn gaussian_linear_class_materializes() {
        // One context, two actions, 1-d features; box thetas meshed at a
        // fixed round stay within the engine's candidate budget.
        let cfg = ClassConfig::GaussianLinear {
            n_contexts: 1,
            n_actions: 2,
            feature_dim: 1,
            features: vec![vec![0.5], vec![1.0]],
            sigma: 0.5,
            sigma_bounds: (0.4, 0.6),
            thetas: ThetaSet::Box {
                lo: vec![0.0],
                hi: vec![1.0],
            },
            mesh_round: 10,
        };
        let tables = cfg.build().unwrap();
        assert!(tables.len() > 2);
        assert!(tables.len() <= 128);
        assert_eq!(tables[0].n_actions(), 2);
    }
}
