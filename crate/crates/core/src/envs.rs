//! Simulated ground-truth environments for the four constrained reductions,
//! plus the brute-force optimal-feasible-policy benchmark regret is measured
//! against.
//!
//! Regret is always measured against the per-context optimal feasible policy
//! under the TRUE constraint law, never against the algorithm's estimated
//! feasible set. The constraint functional of a policy is the pi-average of
//! the per-arm functional values (linear in pi), so in particular risk-aware
//! feasibility averages per-arm variances rather than taking the variance of
//! the mixture.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::divergence::{Density, DiscreteDist, GaussianDist};
use crate::models::{DensityTable, Functional};
use crate::oracle::PIN_TOL;
use crate::policy::{select_action, PolicySimplex, FEAS_TOL};

/// Outcome noise for the constrained-bandit constructor. Gaussian outcomes
/// are sampled unclipped: the oracle likelihoods must match the sampling law
/// exactly, and the [0, 1] range requirement binds the functional values
/// (the means), not the raw samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Bernoulli,
    Gaussian { sigma: f64 },
}

/// A fully specified simulation environment: true laws, functionals,
/// threshold, and the safe action with its guaranteed levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub label: String,
    pub f_star: DensityTable,
    pub g_star: DensityTable,
    pub t1: Functional,
    pub t2: Functional,
    pub tau: f64,
    pub safe_action: usize,
    /// Guaranteed safe-action utility: `min_x T1(f*_{x, a0})`.
    pub r0: f64,
    /// Safe-action constraint level, constant across contexts.
    pub c0: f64,
    /// Precomputed `T1(f*_{x,a})`, row-major by context.
    t1_vals: Vec<f64>,
    /// Precomputed `T2(g*_{x,a})`, row-major by context.
    t2_vals: Vec<f64>,
}

impl EnvironmentSpec {
    /// Validates the safe-action premise (the constraint functional at `a0`
    /// is the same `c0 <= tau` in every context) and the [0, 1] range of
    /// both functionals, then freezes the functional tables.
    pub fn new(
        label: impl Into<String>,
        f_star: DensityTable,
        g_star: DensityTable,
        t1: Functional,
        t2: Functional,
        tau: f64,
        safe_action: usize,
    ) -> Result<Self> {
        if !f_star.same_shape(&g_star) {
            return Err(Error::DimensionMismatch {
                expected: f_star.n_contexts() * f_star.n_actions(),
                actual: g_star.n_contexts() * g_star.n_actions(),
            });
        }
        let (nx, k) = (f_star.n_contexts(), f_star.n_actions());
        if safe_action >= k {
            return Err(Error::Parameter {
                name: "safe_action",
                detail: format!("{safe_action} out of range for {k} actions"),
            });
        }
        let mut t1_vals = Vec::with_capacity(nx * k);
        let mut t2_vals = Vec::with_capacity(nx * k);
        for x in 0..nx {
            for a in 0..k {
                let u = t1.eval(f_star.get(x, a))?;
                let c = t2.eval(g_star.get(x, a))?;
                for (name, v) in [("t1", u), ("t2", c)] {
                    if !(-1e-9..=1.0 + 1e-9).contains(&v) {
                        return Err(Error::Parameter {
                            name: "functional range",
                            detail: format!("{name} at ({x}, {a}) is {v}, outside [0, 1]"),
                        });
                    }
                }
                t1_vals.push(u);
                t2_vals.push(c);
            }
        }
        let c0 = t2_vals[safe_action];
        for x in 0..nx {
            let v = t2_vals[x * k + safe_action];
            if (v - c0).abs() > PIN_TOL {
                return Err(Error::Parameter {
                    name: "safe_action",
                    detail: format!(
                        "constraint value {v} at context {x} differs from c0 = {c0}"
                    ),
                });
            }
        }
        if c0 > tau + FEAS_TOL {
            return Err(Error::Parameter {
                name: "tau",
                detail: format!("threshold {tau} below the safe level c0 = {c0}"),
            });
        }
        let r0 = (0..nx)
            .map(|x| t1_vals[x * k + safe_action])
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            label: label.into(),
            f_star,
            g_star,
            t1,
            t2,
            tau,
            safe_action,
            r0,
            c0,
            t1_vals,
            t2_vals,
        })
    }

    pub fn n_contexts(&self) -> usize {
        self.f_star.n_contexts()
    }

    pub fn k(&self) -> usize {
        self.f_star.n_actions()
    }

    /// True utility `T1(f*_{x,a})`.
    pub fn utility(&self, x: usize, a: usize) -> f64 {
        self.t1_vals[x * self.k() + a]
    }

    /// True constraint value `T2(g*_{x,a})`.
    pub fn cost(&self, x: usize, a: usize) -> f64 {
        self.t2_vals[x * self.k() + a]
    }

    pub fn expected_utility(&self, x: usize, pi: &PolicySimplex) -> f64 {
        pi.probs()
            .iter()
            .enumerate()
            .map(|(a, w)| w * self.utility(x, a))
            .sum()
    }

    pub fn expected_cost(&self, x: usize, pi: &PolicySimplex) -> f64 {
        pi.probs()
            .iter()
            .enumerate()
            .map(|(a, w)| w * self.cost(x, a))
            .sum()
    }

    pub fn is_feasible(&self, x: usize, pi: &PolicySimplex) -> bool {
        self.expected_cost(x, pi) <= self.tau + FEAS_TOL
    }
}

/// Constrained contextual bandit: noisy rewards and costs with mean
/// functionals on both sides.
pub fn make_constrained_bandit(
    reward_means: &[Vec<f64>],
    cost_means: &[Vec<f64>],
    noise: NoiseKind,
    tau: f64,
    safe_action: usize,
) -> Result<EnvironmentSpec> {
    let nx = reward_means.len();
    let k = reward_means.first().map_or(0, |r| r.len());
    if nx == 0 || k == 0 || cost_means.len() != nx {
        return Err(Error::Parameter {
            name: "means",
            detail: "reward and cost mean tables must be nonempty and congruent".into(),
        });
    }
    let build = |means: &[Vec<f64>]| -> Result<DensityTable> {
        let mut cells = Vec::with_capacity(nx * k);
        for row in means {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    actual: row.len(),
                });
            }
            for &m in row {
                if !(0.0..=1.0).contains(&m) {
                    return Err(Error::Parameter {
                        name: "mean",
                        detail: format!("{m} outside [0, 1]"),
                    });
                }
                cells.push(match noise {
                    NoiseKind::Bernoulli => Density::Discrete(DiscreteDist::bernoulli(m)?),
                    NoiseKind::Gaussian { sigma } => {
                        Density::Gaussian(GaussianDist::new(m, sigma)?)
                    }
                });
            }
        }
        DensityTable::new(nx, k, cells)
    };
    // Hellinger has a closed Gaussian form while TV is discrete-only, so the
    // declared Lipschitz metric follows the carrier.
    let functional = match noise {
        NoiseKind::Bernoulli => Functional::mean_tv(),
        NoiseKind::Gaussian { .. } => Functional::mean_hellinger(),
    };
    EnvironmentSpec::new(
        "constrained_bandit",
        build(reward_means)?,
        build(cost_means)?,
        functional,
        functional,
        tau,
        safe_action,
    )
}

/// Risk-aware bandit: the constraint is the variance of the selected arm's
/// own reward law, so `g* = f*` and only the functional changes.
pub fn make_risk_aware(
    reward_laws: DensityTable,
    variance_threshold: f64,
    safe_action: usize,
) -> Result<EnvironmentSpec> {
    for x in 0..reward_laws.n_contexts() {
        for a in 0..reward_laws.n_actions() {
            if let Density::Discrete(d) = reward_laws.get(x, a) {
                if d.values().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::Parameter {
                        name: "reward_laws",
                        detail: format!("support at ({x}, {a}) leaves [0, 1]"),
                    });
                }
            }
        }
    }
    EnvironmentSpec::new(
        "risk_aware",
        reward_laws.clone(),
        reward_laws,
        Functional::mean_tv(),
        Functional::variance_tv(1.0),
        variance_threshold,
        safe_action,
    )
}

/// Online hypothesis testing with per-round error control: action 0 rejects,
/// action 1 accepts. Power `T1` collects the prior mass when rejecting;
/// false-acceptance rate `T2` collects it when accepting; `tau` is the error
/// level alpha. At any deterministic action the two Bernoullis partition the
/// prior mass, so `T1 + T2 = P(y=0|x)` exactly.
pub fn make_hypothesis_test(prior_y0: &[f64], alpha: f64) -> Result<EnvironmentSpec> {
    if prior_y0.is_empty() {
        return Err(Error::Parameter {
            name: "prior_y0",
            detail: "need at least one context".into(),
        });
    }
    let nx = prior_y0.len();
    let mut f_cells = Vec::with_capacity(nx * 2);
    let mut g_cells = Vec::with_capacity(nx * 2);
    for &p in prior_y0 {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter {
                name: "prior_y0",
                detail: format!("{p} outside [0, 1]"),
            });
        }
        f_cells.push(Density::Discrete(DiscreteDist::bernoulli(p)?));
        f_cells.push(Density::Discrete(DiscreteDist::bernoulli(0.0)?));
        g_cells.push(Density::Discrete(DiscreteDist::bernoulli(0.0)?));
        g_cells.push(Density::Discrete(DiscreteDist::bernoulli(p)?));
    }
    EnvironmentSpec::new(
        "hypothesis_test",
        DensityTable::new(nx, 2, f_cells)?,
        DensityTable::new(nx, 2, g_cells)?,
        Functional::mean_tv(),
        Functional::mean_tv(),
        alpha,
        0,
    )
}

/// Active learning under a per-round query budget. Base action `a` with query
/// bit `i` maps to augmented index `2a + i`. The predictive loss law does
/// not depend on the query bit (querying buys information, which shows up
/// through the learner's oracle, not through the per-round loss), while the
/// query cost is a point mass at `c(x, a) * i`.
pub fn make_active_learning(
    label_prior_y1: &[f64],
    losses: &[[f64; 2]],
    query_costs: &[Vec<f64>],
    budget: f64,
) -> Result<EnvironmentSpec> {
    let nx = label_prior_y1.len();
    let k_base = losses.len();
    if nx == 0 || k_base == 0 || query_costs.len() != nx {
        return Err(Error::Parameter {
            name: "active_learning",
            detail: "need contexts, base actions, and congruent cost rows".into(),
        });
    }
    for row in losses {
        if row.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
            return Err(Error::Parameter {
                name: "losses",
                detail: "losses must lie in [0, 1]".into(),
            });
        }
    }
    let k = 2 * k_base;
    let mut f_cells = Vec::with_capacity(nx * k);
    let mut g_cells = Vec::with_capacity(nx * k);
    for (x, &p) in label_prior_y1.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter {
                name: "label_prior_y1",
                detail: format!("{p} outside [0, 1]"),
            });
        }
        if query_costs[x].len() != k_base {
            return Err(Error::DimensionMismatch {
                expected: k_base,
                actual: query_costs[x].len(),
            });
        }
        for (a, loss_row) in losses.iter().enumerate() {
            let c = query_costs[x][a];
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Parameter {
                    name: "query_costs",
                    detail: format!("{c} outside [0, 1]"),
                });
            }
            let loss_law = if (loss_row[0] - loss_row[1]).abs() <= 1e-12 {
                DiscreteDist::point_mass(vec![loss_row[0]], 0)?
            } else if loss_row[0] < loss_row[1] {
                DiscreteDist::new(vec![loss_row[0], loss_row[1]], vec![1.0 - p, p])?
            } else {
                DiscreteDist::new(vec![loss_row[1], loss_row[0]], vec![p, 1.0 - p])?
            };
            for i in 0..2 {
                f_cells.push(Density::Discrete(loss_law.clone()));
                g_cells.push(Density::Discrete(DiscreteDist::point_mass(vec![c * i as f64], 0)?));
            }
        }
    }
    EnvironmentSpec::new(
        "active_learning",
        DensityTable::new(nx, k, f_cells)?,
        DensityTable::new(nx, k, g_cells)?,
        Functional::neg_mean_tv(),
        Functional::mean_tv(),
        budget,
        0,
    )
}

/// Exact benchmark at one context: the best feasible policy under the true
/// laws. Sweeps the grid, then the extreme points of the feasible region
/// (one linear constraint over the simplex, so extreme points put mass on at
/// most two actions: feasible pure actions and constraint-tight pairs).
/// The safe action keeps the feasible set nonempty.
pub fn optimal_feasible_policy(
    env: &EnvironmentSpec,
    x: usize,
    grid: &[PolicySimplex],
) -> Result<(PolicySimplex, f64)> {
    let k = env.k();
    if x >= env.n_contexts() {
        return Err(Error::Parameter {
            name: "x",
            detail: format!("context {x} out of range"),
        });
    }
    let mut best: Option<(PolicySimplex, f64)> = None;
    let mut consider = |pi: PolicySimplex, value: f64| match &best {
        Some((_, v)) if value <= *v => {}
        _ => best = Some((pi, value)),
    };
    for pi in grid {
        if pi.k() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: pi.k(),
            });
        }
        if env.is_feasible(x, pi) {
            consider(pi.clone(), env.expected_utility(x, pi));
        }
    }
    for a in 0..k {
        if env.cost(x, a) <= env.tau + FEAS_TOL {
            consider(PolicySimplex::point_mass(k, a), env.utility(x, a));
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let (ci, cj) = (env.cost(x, i), env.cost(x, j));
            // A tight mixture exists only when the pair straddles tau.
            let (lo_a, hi_a, lo_c, hi_c) = if ci <= cj { (i, j, ci, cj) } else { (j, i, cj, ci) };
            if lo_c <= env.tau && hi_c > env.tau {
                let gamma = (env.tau - lo_c) / (hi_c - lo_c);
                let mut probs = vec![0.0; k];
                probs[lo_a] = 1.0 - gamma;
                probs[hi_a] = gamma;
                let value =
                    (1.0 - gamma) * env.utility(x, lo_a) + gamma * env.utility(x, hi_a);
                consider(PolicySimplex::new(probs)?, value);
            }
        }
    }
    best.ok_or(Error::EmptyConfidenceSet {
        detail: format!("no feasible policy at context {x}; safe-action premise broken"),
    })
}

/// What one environment step contributes to the ledger.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerDelta {
    pub action: usize,
    pub y: f64,
    pub z: f64,
    pub opt_value: f64,
    /// pi-expected true utility of the played policy (not the sample).
    pub realized: f64,
    pub expected_cost: f64,
    pub violated: bool,
}

/// Sample one round: action from the policy, then outcomes from the true
/// laws, all from the same stream.
pub fn step<R: Rng + ?Sized>(
    env: &EnvironmentSpec,
    x: usize,
    pi: &PolicySimplex,
    opt_value: f64,
    rng: &mut R,
) -> Result<LedgerDelta> {
    let a = select_action(pi, rng);
    step_with_action(env, x, pi, a, opt_value, rng)
}

/// Same as [`step`] with the action drawn by the caller, so the harness can
/// keep policy sampling and environment noise on separate streams.
pub fn step_with_action<R: Rng + ?Sized>(
    env: &EnvironmentSpec,
    x: usize,
    pi: &PolicySimplex,
    action: usize,
    opt_value: f64,
    rng: &mut R,
) -> Result<LedgerDelta> {
    if x >= env.n_contexts() || pi.k() != env.k() || action >= env.k() {
        return Err(Error::Parameter {
            name: "step",
            detail: format!("context {x} / action {action} out of range"),
        });
    }
    let y = env.f_star.sample(x, action, rng);
    let z = env.g_star.sample(x, action, rng);
    let expected_cost = env.expected_cost(x, pi);
    Ok(LedgerDelta {
        action,
        y,
        z,
        opt_value,
        realized: env.expected_utility(x, pi),
        expected_cost,
        violated: expected_cost > env.tau + FEAS_TOL,
    })
}

/// Running regret and violation bookkeeping for one trajectory. Regret
/// increments are nonnegative whenever the played policy is feasible (the
/// benchmark maximizes over exactly the feasible set); violations are
/// counted only after the warm-up rounds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    warmup: usize,
    opt_values: Vec<f64>,
    realized: Vec<f64>,
    cum_regret: Vec<f64>,
    violation_rounds: Vec<usize>,
}

impl RegretLedger {
    pub fn new(warmup: usize) -> Self {
        Self {
            warmup,
            ..Self::default()
        }
    }

    /// Record round `round` (1-based, strictly sequential).
    pub fn apply(&mut self, round: usize, delta: &LedgerDelta) -> Result<()> {
        if round != self.opt_values.len() + 1 {
            return Err(Error::Parameter {
                name: "round",
                detail: format!(
                    "round {round} out of sequence: {} recorded",
                    self.opt_values.len()
                ),
            });
        }
        let prev = self.cum_regret.last().copied().unwrap_or(0.0);
        self.opt_values.push(delta.opt_value);
        self.realized.push(delta.realized);
        self.cum_regret.push(prev + (delta.opt_value - delta.realized));
        if delta.violated && round > self.warmup {
            self.violation_rounds.push(round);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.opt_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opt_values.is_empty()
    }

    pub fn cumulative_regret(&self) -> f64 {
        self.cum_regret.last().copied().unwrap_or(0.0)
    }

    pub fn cum_regret_series(&self) -> &[f64] {
        &self.cum_regret
    }

    pub fn regret_increment(&self, round: usize) -> f64 {
        self.opt_values[round - 1] - self.realized[round - 1]
    }

    pub fn violations(&self) -> usize {
        self.violation_rounds.len()
    }

    pub fn violation_rounds(&self) -> &[usize] {
        &self.violation_rounds
    }
}
