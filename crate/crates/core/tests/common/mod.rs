//! Shared reference instance for the acceptance gates and the replay pin.

use gedlab_core::envs::NoiseKind;
use gedlab_core::harness::{default_config, ClassConfig, EnvConfig, RunConfig};

/// Seed of the pinned reference run; its CSV digest is frozen below.
pub const REFERENCE_SEED: u64 = 42;

/// SHA-256 of the per-round CSV produced by `run_one(acceptance_config(),
/// REFERENCE_SEED)`. Regenerate deliberately or not at all: a drift here
/// means replay broke.
pub const REFERENCE_CSV_SHA256: &str =
    "acfd26ecda67296d639745737ffef3280ac61953f5b4bc7a2572853712e45613";

/// Eight-member Bernoulli class around `base`: member 0 is the table
/// itself, members 1..8 sit near the opposite extreme of every cell (with
/// a per-member offset keeping the tables distinct), so each informative
/// round contributes a large squared divergence against the fitted model
/// and the confidence set collapses well inside the horizon.
fn antipodal_class(base: &[Vec<f64>], pin_zero_action: Option<usize>) -> Vec<Vec<Vec<f64>>> {
    (0..8)
        .map(|j| {
            base.iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .map(|(a, &p)| {
                            if pin_zero_action == Some(a) {
                                return 0.0;
                            }
                            if j == 0 {
                                return p;
                            }
                            if p <= 0.5 {
                                0.9 - 0.01 * j as f64
                            } else {
                                0.1 + 0.01 * j as f64
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Reference constrained bandit: 4 contexts, 3 actions, |F| = |G| = 8.
/// Per context one arm is individually infeasible (cost above tau) so the
/// feasibility gate is not vacuous, while true costs leave the optimal
/// mixture well inside the feasible region once the classes are learned.
pub fn acceptance_config() -> RunConfig {
    let reward_means = vec![
        vec![0.82, 0.78, 0.74],
        vec![0.76, 0.84, 0.74],
        vec![0.80, 0.75, 0.72],
        vec![0.74, 0.81, 0.72],
    ];
    let cost_means = vec![
        vec![0.45, 0.10, 0.0],
        vec![0.12, 0.44, 0.0],
        vec![0.42, 0.08, 0.0],
        vec![0.10, 0.46, 0.0],
    ];
    let mut cfg = default_config();
    cfg.label = "acceptance".into();
    cfg.f_class = ClassConfig::BernoulliMeans {
        means: antipodal_class(&reward_means, None),
    };
    cfg.g_class = ClassConfig::BernoulliMeans {
        means: antipodal_class(&cost_means, Some(2)),
    };
    cfg.env = EnvConfig::ConstrainedBandit {
        reward_means,
        cost_means,
        noise: NoiseKind::Bernoulli,
        tau: 0.4,
        safe_action: 2,
    };
    cfg.delta = 0.1;
    cfg.horizon = 500;
    cfg.simplex_resolution = 50;
    cfg.seed = 7;
    cfg.replications = 200;
    cfg
}
