//! Monte-Carlo sweeps across seeds: parallel execution with seed-order
//! aggregation, Wilson-interval feasibility gates, checkpointed regret
//! means, and the regret-vs-bound diagnostic ratio.

use serde::{Deserialize, Serialize};

use crate::envs::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::harness::config::{config_hash, RunConfig};
use crate::harness::run::{run_one, RunSummary};
use crate::harness::SCHEMA_VERSION;
use crate::oracle::{est_schedule, EstClass};
use crate::par;
use crate::policy::{alpha_r_default, BetaSchedule};
use crate::rng::run_seed;

/// Two-sided 95% Wilson score interval for a binomial proportion
/// (z = Phi^{-1}(0.975)). Gates compare the lower bound against the target
/// level so a single unlucky run cannot flip the verdict.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Replicate seeds derived from the config's base seed.
pub fn seeds_for(base: u64, n: usize) -> Vec<u64> {
    (0..n).map(|i| run_seed(base, i as u64)).collect()
}

/// Mean and standard error of cumulative regret at one checkpoint round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAgg {
    pub round: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Aggregate of a multi-seed sweep. Per-seed summaries are kept in seed
/// order so the report is identical however the runs were scheduled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub label: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<RunSummary>,
    /// Runs with at least one post-warm-up true-constraint violation.
    pub violation_runs: usize,
    pub violation_fraction: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub checkpoints: Vec<CheckpointAgg>,
    pub mean_final_regret: f64,
    /// Mean final regret divided by the theorem's closed-form guarantee.
    pub regret_bound_ratio: f64,
    pub all_potential_hold: bool,
    pub all_pded_hold: bool,
}

fn checkpoint_rounds(horizon: usize) -> Vec<usize> {
    let mut rounds = vec![
        (horizon / 4).max(1),
        (horizon / 2).max(1),
        horizon.max(1),
    ];
    rounds.sort_unstable();
    rounds.dedup();
    rounds
}

/// Closed-form regret guarantee with all constants explicit: the warm-up
/// and exploration terms driven by beta_T through the potential lemma, plus
/// the feasibility-width term driven by the second structural lemma.
pub fn regret_bound_rhs(cfg: &RunConfig, env: &EnvironmentSpec) -> Result<f64> {
    let t = cfg.horizon;
    let k = env.k();
    let dim = (env.n_contexts() * k) as f64;
    let cap = cfg.conf_metric.cap_hint().ok_or(Error::Config {
        field: "conf_metric".into(),
        detail: "bound ratio needs a capped divergence".into(),
    })?;
    let card_f = cfg.f_class.build()?.len();
    let card_g = cfg.g_class.build()?.len();
    let beta_schedule = cfg.beta.unwrap_or(BetaSchedule::Finite { card: card_f });
    let est_class = cfg
        .est_class_g
        .unwrap_or(EstClass::FiniteCard { card: card_g });
    let beta_t = beta_schedule.beta(t, cfg.delta, env.t1.lipschitz, k)?;
    let r_t = est_schedule(est_class, t, cfg.delta)?;
    let alpha_r = alpha_r_default(env.r0, env.tau, env.c0)?;
    let tf = t as f64;
    let kf = k as f64;
    let potential_term = 2.0 * beta_t * (kf + kf * (tf / kf).ln());
    let warmup_term = 2.0 * kf * beta_t * (1.0 + tf.ln());
    let width_term = alpha_r * (1.0 / tf + cap * dim.min(tf) + 4.0 * (dim * r_t * tf).sqrt());
    Ok(potential_term + warmup_term + width_term)
}

fn aggregate(cfg: &RunConfig, seeds: &[u64], per_seed: Vec<RunSummary>) -> Result<SweepReport> {
    let n = per_seed.len();
    let violation_runs = per_seed.iter().filter(|s| s.violations > 0).count();
    let (wilson_low, wilson_high) = wilson_interval(violation_runs, n);
    let mut checkpoints = Vec::new();
    for round in checkpoint_rounds(cfg.horizon) {
        let values: Vec<f64> = per_seed.iter().map(|s| s.cum_regret[round - 1]).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        checkpoints.push(CheckpointAgg {
            round,
            mean,
            stderr,
        });
    }
    let mean_final_regret =
        per_seed.iter().map(|s| s.final_regret).sum::<f64>() / n as f64;
    let env = cfg.env.build()?;
    let rhs = regret_bound_rhs(cfg, &env)?;
    Ok(SweepReport {
        schema_version: SCHEMA_VERSION,
        label: cfg.label.clone(),
        config_hash: config_hash(cfg),
        seeds: seeds.to_vec(),
        violation_runs,
        violation_fraction: violation_runs as f64 / n as f64,
        wilson_low,
        wilson_high,
        checkpoints,
        mean_final_regret,
        regret_bound_ratio: mean_final_regret / rhs,
        all_potential_hold: per_seed.iter().all(|s| s.potential.holds()),
        all_pded_hold: per_seed
            .iter()
            .all(|s| s.pded1.iter().all(|(_, c)| c.holds()) && s.pded2.holds()),
        per_seed,
    })
}

/// Run every seed (in parallel when the `parallel` feature is on) and
/// aggregate in seed order.
pub fn run_sweep(cfg: &RunConfig, seeds: &[u64]) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::Config {
            field: "seeds".into(),
            detail: "need at least one seed".into(),
        });
    }
    cfg.validate()?;
    let results = par::map_indexed(seeds.len(), |i| run_one(cfg, seeds[i]).map(|a| a.summary));
    let per_seed: Vec<RunSummary> = results.into_iter().collect::<Result<_>>()?;
    aggregate(cfg, seeds, per_seed)
}

/// Single-threaded twin of [`run_sweep`]; must produce the identical report.
pub fn run_sweep_sequential(cfg: &RunConfig, seeds: &[u64]) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::Config {
            field: "seeds".into(),
            detail: "need at least one seed".into(),
        });
    }
    cfg.validate()?;
    let results =
        par::map_indexed_seq(seeds.len(), |i| run_one(cfg, seeds[i]).map(|a| a.summary));
    let per_seed: Vec<RunSummary> = results.into_iter().collect::<Result<_>>()?;
    aggregate(cfg, seeds, per_seed)
}
