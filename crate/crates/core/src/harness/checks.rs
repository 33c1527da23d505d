//! Standalone check routines behind the CLI: Monte-Carlo coverage trials
//! for the two oracle guarantees, and a lemma re-audit that replays a
//! stored trajectory instead of trusting its summary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::{Density, GaussianDist, Metric};
use crate::eluder::{amplitude, check_lemma_pded1, check_lemma_pded2, ModelPairGrid};
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::run::PDED1_EPS;
use crate::harness::sweep::wilson_interval;
use crate::models::{FeatureMap, FiniteDensityClass};
use crate::oracle::{est, est_schedule, least_squares_fit, mle_fit, EstClass, Obs};
use crate::policy::{potential_lemma_check, TrajectoryRecord};
use crate::rng::{run_seed, stream, Purpose};
use crate::LemmaCheck;

/// Outcome of a batch of oracle coverage trials: how often the fitted
/// model's summed squared Hellinger error stayed within its budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub kind: String,
    pub trials: usize,
    pub covered: usize,
    pub coverage: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// The budget each trial was checked against.
    pub budget: f64,
    pub delta: f64,
}

impl CoverageReport {
    /// The guarantee promises coverage `1 - delta`; the gate subtracts
    /// `slack` and tests the Wilson lower bound so a handful of unlucky
    /// trials cannot flip the verdict.
    pub fn passes(&self, slack: f64) -> bool {
        self.wilson_low >= 1.0 - self.delta - slack
    }

    fn new(kind: &str, trials: usize, covered: usize, budget: f64, delta: f64) -> Self {
        let (wilson_low, wilson_high) = wilson_interval(covered, trials);
        Self {
            kind: kind.into(),
            trials,
            covered,
            coverage: covered as f64 / trials as f64,
            wilson_low,
            wilson_high,
            budget,
            delta,
        }
    }
}

fn require_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::Parameter {
            name: "trials",
            detail: "need at least one trial".into(),
        });
    }
    Ok(())
}

/// The fixed 8-member Bernoulli class the MLE trials fit over: two contexts,
/// two actions, mean ladders offset per cell so neighbors stay confusable.
fn mle_trial_class() -> (Vec<Vec<Vec<f64>>>, FiniteDensityClass) {
    let means: Vec<Vec<Vec<f64>>> = (0..8)
        .map(|m| {
            let base = 0.15 + 0.1 * m as f64;
            vec![
                vec![base, (base - 0.03).max(0.02)],
                vec![(base + 0.04).min(0.98), base],
            ]
        })
        .collect();
    let class = FiniteDensityClass::from_bernoulli_means(&means).expect("fixed class is valid");
    (means, class)
}

/// Monte-Carlo check of the finite-class MLE guarantee: over `trials`
/// seeded datasets of size `n`, count how often the fit's summed squared
/// Hellinger distance to the truth along the sampled design stays within
/// `ln(|F| / delta)`. The true member rotates through the class.
pub fn mle_coverage(trials: usize, n: usize, delta: f64, base_seed: u64) -> Result<CoverageReport> {
    require_trials(trials)?;
    let (means, class) = mle_trial_class();
    let members = class.members();
    let budget = est(
        EstClass::FiniteCard {
            card: members.len(),
        },
        delta,
    )?;
    let mut covered = 0;
    for trial in 0..trials {
        let truth = trial % members.len();
        let mut rng = stream(run_seed(base_seed, trial as u64), Purpose::EnvNoise);
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng.gen_range(0..2);
            let a = rng.gen_range(0..2);
            let y = if rng.gen::<f64>() < means[truth][x][a] {
                1.0
            } else {
                0.0
            };
            data.push(Obs { x, a, y });
        }
        let (fitted, guarantee) = mle_fit(members, &data, delta)?;
        debug_assert_eq!(guarantee.est, budget);
        let mut err = 0.0;
        for obs in &data {
            err += Metric::Hellinger.d_sq(
                members[fitted].get(obs.x, obs.a),
                members[truth].get(obs.x, obs.a),
            )?;
        }
        if err <= budget {
            covered += 1;
        }
    }
    Ok(CoverageReport::new("mle", trials, covered, budget, delta))
}

/// The fixed design the least-squares trials sample from: twelve cells,
/// three well-conditioned feature directions.
fn ls_trial_features() -> FeatureMap {
    FeatureMap::new(
        4,
        3,
        3,
        vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.8, 0.1, 0.1],
            vec![0.2, 0.7, 0.1],
            vec![0.3, 0.3, 0.4],
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.5, 0.0, 0.5],
            vec![0.9, 0.05, 0.05],
            vec![0.1, 0.8, 0.1],
            vec![0.25, 0.25, 0.5],
        ],
    )
    .expect("fixed design is valid")
}

/// Monte-Carlo check of the least-squares guarantee in Hellinger units:
/// over `trials` seeded datasets of size `n` with noise scale `sigma`,
/// count how often the summed squared Hellinger distance between the
/// fitted and true Gaussian means along the design stays within
/// `(d + 2 sqrt(d ln(1/delta)) + 2 ln(1/delta)) / 2`.
pub fn ls_coverage(
    trials: usize,
    n: usize,
    sigma: f64,
    delta: f64,
    base_seed: u64,
) -> Result<CoverageReport> {
    require_trials(trials)?;
    if !(sigma > 0.0) {
        return Err(Error::Parameter {
            name: "sigma",
            detail: "noise scale must be positive".into(),
        });
    }
    let features = ls_trial_features();
    let d = features.dim();
    let theta_star = [0.6, -0.4, 0.3];
    let budget = est(EstClass::LinearGaussian { dim: d }, delta)?;
    let noise = rand_distr::Normal::new(0.0, sigma).expect("sigma checked above");
    let mut covered = 0;
    for trial in 0..trials {
        let mut rng = stream(run_seed(base_seed, trial as u64), Purpose::EnvNoise);
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng.gen_range(0..features.n_contexts());
            let a = rng.gen_range(0..features.n_actions());
            let phi = features.eval(x, a);
            let mean: f64 = phi.iter().zip(theta_star.iter()).map(|(p, t)| p * t).sum();
            let y = mean + rng.sample(noise);
            data.push(Obs { x, a, y });
        }
        let fit = least_squares_fit(&features, &data)?;
        let mut err = 0.0;
        for obs in &data {
            let phi = features.eval(obs.x, obs.a);
            let mu_hat: f64 = phi.iter().zip(fit.iter()).map(|(p, t)| p * t).sum();
            let mu_star: f64 = phi.iter().zip(theta_star.iter()).map(|(p, t)| p * t).sum();
            err += Metric::Hellinger.d_sq(
                &Density::Gaussian(GaussianDist::new(mu_hat, sigma)?),
                &Density::Gaussian(GaussianDist::new(mu_star, sigma)?),
            )?;
        }
        if err <= budget {
            covered += 1;
        }
    }
    Ok(CoverageReport::new("ls", trials, covered, budget, delta))
}

/// Re-audit of a stored trajectory against the same config: potential lemma
/// from the action sequence, both structural lemmas from brute-force
/// amplitudes over the recorded ball members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub seed: u64,
    pub rounds: usize,
    pub warmup: usize,
    pub potential: LemmaCheck,
    pub pded1: Vec<(f64, LemmaCheck)>,
    pub pded2: LemmaCheck,
}

impl LemmaReport {
    pub fn holds(&self) -> bool {
        self.potential.holds()
            && self.pded1.iter().all(|(_, c)| c.holds())
            && self.pded2.holds()
    }
}

/// Recompute every lemma check for a recorded trajectory. Independent of
/// the summary the run wrote: amplitudes come from a fresh pairwise grid
/// over the config's constraint class and the recorded ball members.
pub fn lemma_report(cfg: &RunConfig, trajectory: &TrajectoryRecord) -> Result<LemmaReport> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let k = env.k();
    let g_tables = cfg.g_class.build()?;
    let est_class = cfg.est_class_g.unwrap_or(EstClass::FiniteCard {
        card: g_tables.len(),
    });
    let cap = cfg.conf_metric.cap_hint().ok_or(Error::Config {
        field: "conf_metric".into(),
        detail: "lemma audit needs a capped divergence (tv or hellinger)".into(),
    })?;
    let grid = ModelPairGrid::new(g_tables, cfg.conf_metric)?;

    let mut actions = Vec::with_capacity(trajectory.rounds.len());
    let mut omegas = Vec::new();
    let mut radii = Vec::new();
    for (i, round) in trajectory.rounds.iter().enumerate() {
        if round.t != i + 1 {
            return Err(Error::Parameter {
                name: "trajectory",
                detail: format!("round {} is recorded at position {}", round.t, i + 1),
            });
        }
        actions.push(round.action);
        if round.t > k {
            if round.ball_members.is_empty() {
                return Err(Error::Parameter {
                    name: "trajectory",
                    detail: format!("round {} lacks its confidence ball", round.t),
                });
            }
            omegas.push(amplitude(&grid, &round.ball_members, round.x, round.action)?.omega);
            radii.push(est_schedule(est_class, round.t, cfg.delta)?);
        }
    }

    let potential = potential_lemma_check(&actions, k)?;
    let dim_upper = (env.n_contexts() * k) as f64;
    let mut pded1 = Vec::with_capacity(PDED1_EPS.len());
    for eps in PDED1_EPS {
        pded1.push((eps, check_lemma_pded1(&omegas, &radii, eps, dim_upper)?));
    }
    let pded2 = check_lemma_pded2(&omegas, &radii, dim_upper, cap)?;
    Ok(LemmaReport {
        seed: trajectory.seed,
        rounds: trajectory.rounds.len(),
        warmup: k,
        potential,
        pded1,
        pded2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::default_config;
    use crate::harness::run::run_one;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mle_coverage_is_deterministic_and_passes() {
        let a = mle_coverage(40, 50, 0.1, 7).unwrap();
        let b = mle_coverage(40, 50, 0.1, 7).unwrap();
        assert_eq!(a, b);
        assert_abs_diff_eq!(a.budget, 80.0f64.ln(), epsilon = 1e-12);
        assert!(a.passes(0.05), "coverage {} low {}", a.coverage, a.wilson_low);
        assert!(a.covered <= a.trials);
    }

    #[test]
    fn ls_coverage_is_deterministic_and_passes() {
        let a = ls_coverage(40, 100, 1.0, 0.1, 3).unwrap();
        let b = ls_coverage(40, 100, 1.0, 0.1, 3).unwrap();
        assert_eq!(a, b);
        let l = 10.0f64.ln();
        assert_abs_diff_eq!(
            a.budget,
            (3.0 + 2.0 * (3.0 * l).sqrt() + 2.0 * l) / 2.0,
            epsilon = 1e-12
        );
        assert!(a.passes(0.05), "coverage {} low {}", a.coverage, a.wilson_low);
    }

    #[test]
    fn zero_trials_is_rejected() {
        assert!(mle_coverage(0, 50, 0.1, 1).is_err());
        assert!(ls_coverage(0, 100, 1.0, 0.1, 1).is_err());
    }

    #[test]
    fn lemma_report_reproduces_the_run_summary() {
        let mut cfg = default_config();
        cfg.horizon = 24;
        cfg.simplex_resolution = 10;
        let art = run_one(&cfg, 11).unwrap();
        let report = lemma_report(&cfg, &art.trajectory).unwrap();
        // Same inputs through an independent assembly path: the checks must
        // agree to the bit.
        assert_eq!(report.potential, art.summary.potential);
        assert_eq!(report.pded1, art.summary.pded1);
        assert_eq!(report.pded2, art.summary.pded2);
        assert!(report.holds());
        assert_eq!(report.warmup, 3);
        assert_eq!(report.rounds, 24);
    }

    #[test]
    fn lemma_report_rejects_tampered_trajectories() {
        let mut cfg = default_config();
        cfg.horizon = 8;
        cfg.simplex_resolution = 6;
        let art = run_one(&cfg, 2).unwrap();

        let mut renumbered = art.trajectory.clone();
        renumbered.rounds[5].t = 9;
        assert!(lemma_report(&cfg, &renumbered).is_err());

        let mut stripped = art.trajectory.clone();
        stripped.rounds[4].ball_members.clear();
        assert!(lemma_report(&cfg, &stripped).is_err());

        // An out-of-range action is caught by the potential lemma's
        // precondition even on a warm-up round.
        let mut corrupt = art.trajectory.clone();
        corrupt.rounds[0].action = 99;
        assert!(lemma_report(&cfg, &corrupt).is_err());
    }
}
