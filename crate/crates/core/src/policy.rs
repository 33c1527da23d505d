//! The GED-UCB decision engine: warm-up, exploration schedules, feasible
//! policy sets, three-term UCB scoring, and the counterfactual inner loop.
//!
//! Round protocol: rounds are 1-based. Rounds `1..=K` are warm-up (play each
//! action once via [`warmup_action`]); from `K+1` the engine refits both
//! oracles on the real prefix, freezes that round's fit, confidence set, and
//! exploration radius, and replays the counterfactual loop `i = K+1..=t`
//! against the frozen per-round states. Counterfactual action counts restart
//! at zero every round and use the `+1` denominator; they never mix with the
//! real play counts the potential lemma tracks.
//!
//! The argmax over the policy simplex runs on the uniform grid with
//! `simplex_resolution` steps, in canonical lexicographic order, plus the
//! exact feasible-interval endpoints when there are two actions (the
//! objective is convex in the policy, so the continuum optimum sits at an
//! extreme point). Ties always break to the lowest candidate index: grid
//! first, appended vertices after.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::Metric;
use crate::error::{Error, Result};
use crate::models::{DensityTable, Functional};
use crate::oracle::{argmax_lowest, est_schedule, EstClass, PIN_TOL};
use crate::rng::sample_categorical;
use crate::LemmaCheck;

/// Boundary slack for feasibility comparisons, matching the violation
/// tolerance used by the environment ledger.
pub const FEAS_TOL: f64 = 1e-12;

/// A stochastic policy over the K actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySimplex {
    probs: Vec<f64>,
}

impl PolicySimplex {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Parameter {
                name: "probs",
                detail: "policy needs at least one action".into(),
            });
        }
        if probs.iter().any(|&p| p < -1e-12 || !p.is_finite()) {
            return Err(Error::NotADensity {
                detail: "negative or non-finite policy weight".into(),
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::NotADensity {
                detail: format!("policy weights sum to {sum}"),
            });
        }
        Ok(Self { probs })
    }

    pub fn point_mass(k: usize, action: usize) -> Self {
        let mut probs = vec![0.0; k];
        probs[action] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }
}

/// Uniform grid on the simplex: all policies whose weights are multiples of
/// `1/m`, enumerated in lexicographic order of the integer compositions
/// `(c_0, ..., c_{K-1})`, `c_0` ascending first. This order is the canonical
/// tie-breaking order for every argmax in the engine.
pub fn simplex_grid(k: usize, m: usize) -> Result<Vec<PolicySimplex>> {
    if k == 0 || m == 0 {
        return Err(Error::Parameter {
            name: "simplex_grid",
            detail: "need at least one action and resolution >= 1".into(),
        });
    }
    let mut out = Vec::new();
    let mut counts = vec![0usize; k];
    fn rec(counts: &mut Vec<usize>, pos: usize, left: usize, m: usize, out: &mut Vec<PolicySimplex>) {
        if pos == counts.len() - 1 {
            counts[pos] = left;
            let probs = counts.iter().map(|&c| c as f64 / m as f64).collect();
            out.push(PolicySimplex { probs });
            return;
        }
        for c in 0..=left {
            counts[pos] = c;
            rec(counts, pos + 1, left - c, m, out);
        }
    }
    rec(&mut counts, 0, m, m, &mut out);
    Ok(out)
}

/// Warm-up schedule: round `t` of `1..=K` plays action `t - 1`, covering
/// every action exactly once before any estimation happens.
pub fn warmup_action(t: usize, k: usize) -> Result<usize> {
    if t == 0 || t > k {
        return Err(Error::WarmupIndex { t, k });
    }
    Ok(t - 1)
}

/// Default feasibility-vs-utility exchange rate `(1 - r0) / (tau - c0)`.
pub fn alpha_r_default(r0: f64, tau: f64, c0: f64) -> Result<f64> {
    if !(tau > c0) {
        return Err(Error::Parameter {
            name: "tau",
            detail: format!("tau = {tau} must exceed c0 = {c0} for feasibility slack"),
        });
    }
    Ok((1.0 - r0) / (tau - c0))
}

/// Exploration radius for finite utility classes:
/// `sqrt((34 log(2 |F| t^3 / delta) + 2 L1^2 est) t / K)`.
pub fn beta_finite(
    card_f: usize,
    t: usize,
    delta: f64,
    l1: f64,
    est: f64,
    k: usize,
) -> Result<f64> {
    if card_f == 0 || t == 0 || k == 0 || !(delta > 0.0 && delta < 1.0) || !(est >= 0.0) {
        return Err(Error::Parameter {
            name: "beta_finite",
            detail: "need positive card, t, K, est >= 0, delta in (0,1)".into(),
        });
    }
    let t3 = (t as f64).powi(3);
    let log_term = (2.0 * card_f as f64 * t3 / delta).ln();
    Ok(((34.0 * log_term + 2.0 * l1 * l1 * est) * t as f64 / k as f64).sqrt())
}

/// Exploration radius for covered parametric classes:
/// `sqrt((72 (d log(2 + diam L2 t) + log(2 t^3 / delta)) + L_D^2 + 2 L1^2 est) t / K)`.
#[allow(clippy::too_many_arguments)]
pub fn beta_covering(
    d: usize,
    diam: f64,
    l2: f64,
    l_d: f64,
    t: usize,
    delta: f64,
    l1: f64,
    est: f64,
    k: usize,
) -> Result<f64> {
    if d == 0 || t == 0 || k == 0 || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter {
            name: "beta_covering",
            detail: "need positive d, t, K and delta in (0,1)".into(),
        });
    }
    if !(diam >= 0.0 && l2 > 0.0 && l_d >= 0.0 && est >= 0.0) {
        return Err(Error::Parameter {
            name: "beta_covering",
            detail: "diam, L_D, est nonnegative and L2 positive required".into(),
        });
    }
    let t3 = (t as f64).powi(3);
    let inner = 72.0 * (d as f64 * (2.0 + diam * l2 * t as f64).ln() + (2.0 * t3 / delta).ln())
        + l_d * l_d
        + 2.0 * l1 * l1 * est;
    Ok((inner * t as f64 / k as f64).sqrt())
}

/// The three-term objective value for one policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcbScore {
    pub utility_term: f64,
    /// Already scaled by beta.
    pub exploration_term: f64,
    /// Unscaled confidence width; the total applies `alpha_r`.
    pub width_term: f64,
    pub total: f64,
}

/// Reference evaluation of the UCB objective straight from density tables.
/// The engine reproduces these numbers through its caches; tests hold the
/// two routes together.
#[allow(clippy::too_many_arguments)]
pub fn ucb_score(
    pi: &PolicySimplex,
    f_hat: &DensityTable,
    t1: &Functional,
    counts: &[usize],
    beta: f64,
    alpha_r: f64,
    g_tables: &[DensityTable],
    conf_members: &[usize],
    t2: &Functional,
    x: usize,
) -> Result<UcbScore> {
    if conf_members.is_empty() {
        return Err(Error::EmptyConfidenceSet {
            detail: "ucb width over empty confidence set".into(),
        });
    }
    if counts.len() != pi.k() {
        return Err(Error::DimensionMismatch {
            expected: pi.k(),
            actual: counts.len(),
        });
    }
    let mut utility = 0.0;
    let mut exploration = 0.0;
    for (a, &w) in pi.probs().iter().enumerate() {
        utility += w * t1.eval(f_hat.get(x, a))?;
        exploration += w / (counts[a] as f64 + 1.0);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &m in conf_members {
        let mut v = 0.0;
        for (a, &w) in pi.probs().iter().enumerate() {
            v += w * t2.eval(g_tables[m].get(x, a))?;
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let width = hi - lo;
    Ok(UcbScore {
        utility_term: utility,
        exploration_term: beta * exploration,
        width_term: width,
        total: utility + beta * exploration + alpha_r * width,
    })
}

/// Reference feasible set: grid policies whose worst-case constraint value
/// over the confidence set stays within `tau`, with the safe point mass
/// appended when the grid filter drops it. Never empty.
#[allow(clippy::too_many_arguments)]
pub fn feasible_policy_set(
    x: usize,
    g_tables: &[DensityTable],
    conf_members: &[usize],
    t2: &Functional,
    tau: f64,
    a0: usize,
    grid: &[PolicySimplex],
) -> Result<Vec<PolicySimplex>> {
    if conf_members.is_empty() {
        return Err(Error::EmptyConfidenceSet {
            detail: "feasible set over empty confidence set".into(),
        });
    }
    let mut out = Vec::new();
    for pi in grid {
        let mut worst = f64::NEG_INFINITY;
        for &m in conf_members {
            let mut v = 0.0;
            for (a, &w) in pi.probs().iter().enumerate() {
                v += w * t2.eval(g_tables[m].get(x, a))?;
            }
            worst = worst.max(v);
        }
        if worst <= tau + FEAS_TOL {
            out.push(pi.clone());
        }
    }
    let safe = PolicySimplex::point_mass(grid[0].k(), a0);
    if !out.contains(&safe) {
        out.push(safe);
    }
    Ok(out)
}

/// Inverse-CDF draw of one action from a policy.
pub fn select_action<R: Rng + ?Sized>(pi: &PolicySimplex, rng: &mut R) -> usize {
    sample_categorical(rng, pi.probs())
}

/// Which exploration-radius formula the engine applies per round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// Finite utility class of the given cardinality.
    Finite { card: usize },
    /// Covered parametric class: dimension, parameter-set diameter, the
    /// parameter-to-model Lipschitz constant, and the divergence-vs-metric
    /// constant `L_D`.
    Covering { dim: usize, diam: f64, l2: f64, l_d: f64 },
}

impl BetaSchedule {
    fn est_class(&self) -> EstClass {
        match *self {
            BetaSchedule::Finite { card } => EstClass::FiniteCard { card },
            BetaSchedule::Covering { dim, .. } => EstClass::LinearGaussian { dim },
        }
    }

    pub fn beta(&self, t: usize, delta: f64, l1: f64, k: usize) -> Result<f64> {
        let est = est_schedule(self.est_class(), t, delta)?;
        match *self {
            BetaSchedule::Finite { card } => beta_finite(card, t, delta, l1, est, k),
            BetaSchedule::Covering { dim, diam, l2, l_d } => {
                beta_covering(dim, diam, l2, l_d, t, delta, l1, est, k)
            }
        }
    }
}

/// Engine configuration: functionals, thresholds, schedules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub t1: Functional,
    pub t2: Functional,
    /// Divergence the constraint confidence set is metered in.
    pub conf_metric: Metric,
    pub tau: f64,
    pub safe_action: usize,
    pub r0: f64,
    pub c0: f64,
    pub delta: f64,
    pub simplex_resolution: usize,
    pub beta: BetaSchedule,
    /// Complexity of the constraint class, for the confidence radius.
    pub est_class_g: EstClass,
}

impl PolicyParams {
    pub fn alpha_r(&self) -> Result<f64> {
        alpha_r_default(self.r0, self.tau, self.c0)
    }
}

/// One counterfactual step: the inner-loop policy and the action sampled
/// from it. The final iterate's draw is never consumed by later iterations,
/// so it is not sampled and its action is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfStep {
    pub policy: PolicySimplex,
    pub action: Option<usize>,
}

/// Everything the engine decides in one post-warm-up round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundDecision {
    pub policy: PolicySimplex,
    pub beta: f64,
    /// Pinned confidence-set member indices (sorted).
    pub conf_members: Vec<usize>,
    /// Unpinned ball-set member indices (sorted), for amplitude diagnostics.
    pub ball_members: Vec<usize>,
    pub counterfactuals: Vec<CfStep>,
}

/// One observed round in a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub x: usize,
    pub policy: PolicySimplex,
    pub action: usize,
    pub y: f64,
    pub z: f64,
    /// None during warm-up.
    pub beta: Option<f64>,
    pub conf_members: Vec<usize>,
    pub ball_members: Vec<usize>,
    pub counterfactuals: Vec<CfStep>,
}

/// A full seeded run: enough to replay and to audit the structural lemmas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
}

/// Per-round frozen oracle state for the counterfactual loop.
#[derive(Clone, Debug)]
struct PerRound {
    f_id: usize,
    conf_mask: u128,
    ball_mask: u128,
    beta: f64,
}

/// Cached feasibility data for one (context, confidence-mask) pair.
struct FeasEntry {
    feasible: Vec<bool>,
    width: Vec<f64>,
    vertices: Vec<VertexPolicy>,
}

struct VertexPolicy {
    probs: Vec<f64>,
    width: f64,
}

fn mask_members(mask: u128, n: usize) -> Vec<usize> {
    (0..n).filter(|&m| mask >> m & 1 == 1).collect()
}

/// The GED-UCB engine over explicit candidate tables for the utility class F
/// and the constraint class G. Candidate sets are capped at 128 members so
/// confidence sets pack into one mask word; parametric classes enter by
/// materializing a grid within that budget.
pub struct Engine {
    params: PolicyParams,
    alpha_r: f64,
    n_contexts: usize,
    k: usize,
    n_f: usize,
    n_g: usize,
    f_tables: Vec<DensityTable>,
    g_tables: Vec<DensityTable>,
    policies: Vec<PolicySimplex>,
    /// `t1_vals[f * n_cells + x * k + a]`.
    t1_vals: Vec<f64>,
    t2_vals: Vec<f64>,
    /// Utility dots `u_dots[(x * n_f + f) * n_pol + p]`.
    u_dots: Vec<f64>,
    /// Constraint dots `c_dots[(x * n_g + g) * n_pol + p]`.
    c_dots: Vec<f64>,
    /// Pairwise squared divergences `g_d2[(m1 * n_g + m2) * n_cells + cell]`.
    g_d2: Vec<f64>,
    pin_mask: u128,
    loglik_f: Vec<f64>,
    loglik_g: Vec<f64>,
    /// Cumulative squared divergence along the real history per member pair.
    s_pairs: Vec<f64>,
    history_len: usize,
    per_round: Vec<PerRound>,
    feas_index: HashMap<(usize, u128), usize>,
    feas_store: Vec<FeasEntry>,
}

impl Engine {
    pub fn new(
        f_tables: Vec<DensityTable>,
        g_tables: Vec<DensityTable>,
        params: PolicyParams,
    ) -> Result<Self> {
        let f0 = f_tables.first().ok_or(Error::EmptyCandidates {
            detail: "utility class is empty".into(),
        })?;
        let g0 = g_tables.first().ok_or(Error::EmptyCandidates {
            detail: "constraint class is empty".into(),
        })?;
        let (nx, k) = (f0.n_contexts(), f0.n_actions());
        if !g0.same_shape(f0)
            || f_tables.iter().any(|t| !t.same_shape(f0))
            || g_tables.iter().any(|t| !t.same_shape(f0))
        {
            return Err(Error::DimensionMismatch {
                expected: nx * k,
                actual: g0.n_contexts() * g0.n_actions(),
            });
        }
        if f_tables.len() > 128 || g_tables.len() > 128 {
            return Err(Error::Parameter {
                name: "candidates",
                detail: "engine masks support at most 128 members per class".into(),
            });
        }
        if params.safe_action >= k {
            return Err(Error::Parameter {
                name: "safe_action",
                detail: format!("{} out of range for {k} actions", params.safe_action),
            });
        }
        if !(params.delta > 0.0 && params.delta < 1.0) {
            return Err(Error::Parameter {
                name: "delta",
                detail: "must lie in (0, 1)".into(),
            });
        }
        let alpha_r = params.alpha_r()?;
        let policies = simplex_grid(k, params.simplex_resolution)?;
        let n_cells = nx * k;
        let (n_f, n_g) = (f_tables.len(), g_tables.len());

        let mut t1_vals = vec![0.0; n_f * n_cells];
        for (m, table) in f_tables.iter().enumerate() {
            for x in 0..nx {
                for a in 0..k {
                    t1_vals[m * n_cells + x * k + a] = params.t1.eval(table.get(x, a))?;
                }
            }
        }
        let mut t2_vals = vec![0.0; n_g * n_cells];
        for (m, table) in g_tables.iter().enumerate() {
            for x in 0..nx {
                for a in 0..k {
                    t2_vals[m * n_cells + x * k + a] = params.t2.eval(table.get(x, a))?;
                }
            }
        }
        let mut pin_mask: u128 = 0;
        for m in 0..n_g {
            let pinned = (0..nx).all(|x| {
                (t2_vals[m * n_cells + x * k + params.safe_action] - params.c0).abs() <= PIN_TOL
            });
            if pinned {
                pin_mask |= 1 << m;
            }
        }
        if pin_mask == 0 {
            return Err(Error::Parameter {
                name: "g_tables",
                detail: "no constraint candidate satisfies the safe-action pin".into(),
            });
        }
        let n_pol = policies.len();
        let mut u_dots = vec![0.0; nx * n_f * n_pol];
        for x in 0..nx {
            for m in 0..n_f {
                let row = &t1_vals[m * n_cells + x * k..m * n_cells + (x + 1) * k];
                for (p, pi) in policies.iter().enumerate() {
                    u_dots[(x * n_f + m) * n_pol + p] = pi
                        .probs()
                        .iter()
                        .zip(row.iter())
                        .map(|(w, v)| w * v)
                        .sum();
                }
            }
        }
        let mut c_dots = vec![0.0; nx * n_g * n_pol];
        for x in 0..nx {
            for m in 0..n_g {
                let row = &t2_vals[m * n_cells + x * k..m * n_cells + (x + 1) * k];
                for (p, pi) in policies.iter().enumerate() {
                    c_dots[(x * n_g + m) * n_pol + p] = pi
                        .probs()
                        .iter()
                        .zip(row.iter())
                        .map(|(w, v)| w * v)
                        .sum();
                }
            }
        }
        let mut g_d2 = vec![0.0; n_g * n_g * n_cells];
        for m1 in 0..n_g {
            for m2 in (m1 + 1)..n_g {
                for x in 0..nx {
                    for a in 0..k {
                        let d2 = params
                            .conf_metric
                            .d_sq(g_tables[m1].get(x, a), g_tables[m2].get(x, a))?;
                        g_d2[(m1 * n_g + m2) * n_cells + x * k + a] = d2;
                        g_d2[(m2 * n_g + m1) * n_cells + x * k + a] = d2;
                    }
                }
            }
        }
        Ok(Self {
            alpha_r,
            n_contexts: nx,
            k,
            n_f,
            n_g,
            f_tables,
            g_tables,
            policies,
            t1_vals,
            t2_vals,
            u_dots,
            c_dots,
            g_d2,
            pin_mask,
            loglik_f: vec![0.0; n_f],
            loglik_g: vec![0.0; n_g],
            s_pairs: vec![0.0; n_g * n_g],
            history_len: 0,
            per_round: Vec::new(),
            feas_index: HashMap::new(),
            feas_store: Vec::new(),
            params,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn policies(&self) -> &[PolicySimplex] {
        &self.policies
    }

    pub fn g_tables(&self) -> &[DensityTable] {
        &self.g_tables
    }

    pub fn f_tables(&self) -> &[DensityTable] {
        &self.f_tables
    }

    /// Current maximum-likelihood fit of the utility class on the prefix.
    pub fn current_f_fit(&self) -> usize {
        argmax_lowest(&self.loglik_f)
    }

    fn loglik_update(table: &DensityTable, x: usize, a: usize, v: f64) -> Result<f64> {
        match table.density_at(x, a, v) {
            Ok(p) if p > 0.0 => Ok(p.ln()),
            Ok(_) => Ok(f64::NEG_INFINITY),
            Err(Error::OutsideSupport { .. }) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Record one played round: utility outcome `y` feeds the F oracle,
    /// constraint outcome `z` feeds the G oracle. Must be called exactly
    /// once per round, warm-up included.
    pub fn observe(&mut self, x: usize, a: usize, y: f64, z: f64) -> Result<()> {
        if x >= self.n_contexts || a >= self.k {
            return Err(Error::Parameter {
                name: "observe",
                detail: format!("cell ({x}, {a}) out of range"),
            });
        }
        for (m, table) in self.f_tables.iter().enumerate() {
            self.loglik_f[m] += Self::loglik_update(table, x, a, y)?;
        }
        for (m, table) in self.g_tables.iter().enumerate() {
            self.loglik_g[m] += Self::loglik_update(table, x, a, z)?;
        }
        let n_cells = self.n_contexts * self.k;
        let cell = x * self.k + a;
        for m1 in 0..self.n_g {
            for m2 in (m1 + 1)..self.n_g {
                let d2 = self.g_d2[(m1 * self.n_g + m2) * n_cells + cell];
                self.s_pairs[m1 * self.n_g + m2] += d2;
                self.s_pairs[m2 * self.n_g + m1] += d2;
            }
        }
        self.history_len += 1;
        Ok(())
    }

    /// Freeze round `t`'s oracle state from the current prefix: refit both
    /// classes, build the confidence masks, evaluate the exploration radius.
    fn freeze_round(&mut self, t: usize) -> Result<()> {
        if self.loglik_f.iter().all(|&v| v == f64::NEG_INFINITY) {
            return Err(Error::NotADensity {
                detail: "every utility candidate has zero likelihood".into(),
            });
        }
        if self.loglik_g.iter().all(|&v| v == f64::NEG_INFINITY) {
            return Err(Error::NotADensity {
                detail: "every constraint candidate has zero likelihood".into(),
            });
        }
        let f_id = argmax_lowest(&self.loglik_f);
        let g_id = argmax_lowest(&self.loglik_g);
        let radius = est_schedule(self.params.est_class_g, t, self.params.delta)?;
        let mut ball: u128 = 0;
        for m in 0..self.n_g {
            if self.s_pairs[g_id * self.n_g + m] <= radius {
                ball |= 1 << m;
            }
        }
        let conf = ball & self.pin_mask;
        if conf == 0 {
            return Err(Error::EmptyConfidenceSet {
                detail: format!("round {t}: pin removed every ball member"),
            });
        }
        let beta = self
            .params
            .beta
            .beta(t, self.params.delta, self.params.t1.lipschitz, self.k)?;
        self.per_round.push(PerRound {
            f_id,
            conf_mask: conf,
            ball_mask: ball,
            beta,
        });
        Ok(())
    }

    /// Feasibility data for `(x, mask)`, computed once and cached for the
    /// run. Returns an index into the store to keep borrows short.
    fn ensure_feasibility(&mut self, x: usize, mask: u128) -> usize {
        if let Some(&idx) = self.feas_index.get(&(x, mask)) {
            return idx;
        }
        let n_pol = self.policies.len();
        let members = mask_members(mask, self.n_g);
        let mut feasible = vec![false; n_pol];
        let mut width = vec![0.0; n_pol];
        for p in 0..n_pol {
            let mut hi = f64::NEG_INFINITY;
            let mut lo = f64::INFINITY;
            for &m in &members {
                let v = self.c_dots[(x * self.n_g + m) * n_pol + p];
                hi = hi.max(v);
                lo = lo.min(v);
            }
            feasible[p] = hi <= self.params.tau + FEAS_TOL;
            width[p] = hi - lo;
        }
        let mut vertices = Vec::new();
        if self.k == 2 {
            // The feasible region in gamma = pi(1) is an interval; its
            // endpoints are the extreme points the convex objective needs.
            let n_cells = self.n_contexts * self.k;
            let mut lo_g = 0.0f64;
            let mut hi_g = 1.0f64;
            let mut empty = false;
            for &m in &members {
                let c0 = self.t2_vals[m * n_cells + x * 2];
                let c1 = self.t2_vals[m * n_cells + x * 2 + 1];
                let slope = c1 - c0;
                if slope.abs() <= 1e-15 {
                    if c0 > self.params.tau + FEAS_TOL {
                        empty = true;
                        break;
                    }
                } else {
                    let bound = (self.params.tau - c0) / slope;
                    if slope > 0.0 {
                        hi_g = hi_g.min(bound);
                    } else {
                        lo_g = lo_g.max(bound);
                    }
                }
            }
            if !empty && lo_g <= hi_g + FEAS_TOL {
                for gamma in [lo_g.clamp(0.0, 1.0), hi_g.clamp(0.0, 1.0)] {
                    let probs = vec![1.0 - gamma, gamma];
                    let mut hi = f64::NEG_INFINITY;
                    let mut lo = f64::INFINITY;
                    for &m in &members {
                        let c0 = self.t2_vals[m * n_cells + x * 2];
                        let c1 = self.t2_vals[m * n_cells + x * 2 + 1];
                        let v = probs[0] * c0 + probs[1] * c1;
                        hi = hi.max(v);
                        lo = lo.min(v);
                    }
                    vertices.push(VertexPolicy {
                        probs,
                        width: hi - lo,
                    });
                }
            }
        }
        self.feas_store.push(FeasEntry {
            feasible,
            width,
            vertices,
        });
        let idx = self.feas_store.len() - 1;
        self.feas_index.insert((x, mask), idx);
        idx
    }

    /// Run the counterfactual loop for round `t` at context `x` and return
    /// the selected policy with the full inner log. Rounds must be played in
    /// order, warm-up observations included, so `t = history + 1`.
    pub fn select_policy<R: Rng + ?Sized>(
        &mut self,
        t: usize,
        x: usize,
        rng: &mut R,
    ) -> Result<RoundDecision> {
        let k = self.k;
        if t <= k {
            return Err(Error::WarmupIndex { t, k });
        }
        if t != self.history_len + 1 {
            return Err(Error::Parameter {
                name: "t",
                detail: format!(
                    "round {t} out of sequence: {} observations recorded",
                    self.history_len
                ),
            });
        }
        if x >= self.n_contexts {
            return Err(Error::Parameter {
                name: "x",
                detail: format!("context {x} out of range"),
            });
        }
        debug_assert_eq!(self.per_round.len(), t - k - 1);
        self.freeze_round(t)?;

        let n_pol = self.policies.len();
        let n_cells = self.n_contexts * k;
        let mut counts = vec![0usize; k];
        // All counts start at zero, so E_pi[1/(count+1)] is exactly 1.
        let mut explore = vec![1.0; n_pol];
        let mut log: Vec<CfStep> = Vec::with_capacity(t - k);
        let mut chosen = PolicySimplex::point_mass(k, self.params.safe_action);

        for i in (k + 1)..=t {
            let round = self.per_round[i - k - 1].clone();
            let feas_idx = self.ensure_feasibility(x, round.conf_mask);
            let feas = &self.feas_store[feas_idx];
            let u = &self.u_dots[(x * self.n_f + round.f_id) * n_pol..][..n_pol];
            let mut best = f64::NEG_INFINITY;
            let mut best_grid: Option<usize> = None;
            for p in 0..n_pol {
                if !feas.feasible[p] {
                    continue;
                }
                let s = u[p] + round.beta * explore[p] + self.alpha_r * feas.width[p];
                if s > best {
                    best = s;
                    best_grid = Some(p);
                }
            }
            let mut best_vertex: Option<usize> = None;
            let t1_row =
                &self.t1_vals[round.f_id * n_cells + x * k..round.f_id * n_cells + (x + 1) * k];
            for (vi, v) in feas.vertices.iter().enumerate() {
                let mut util = 0.0;
                let mut expl = 0.0;
                for a in 0..k {
                    util += v.probs[a] * t1_row[a];
                    expl += v.probs[a] / (counts[a] as f64 + 1.0);
                }
                let s = util + round.beta * expl + self.alpha_r * v.width;
                if s > best {
                    best = s;
                    best_grid = None;
                    best_vertex = Some(vi);
                }
            }
            chosen = match (best_grid, best_vertex) {
                (Some(p), _) => self.policies[p].clone(),
                (None, Some(vi)) => PolicySimplex {
                    probs: feas.vertices[vi].probs.clone(),
                },
                // The safe point mass is always feasible, so some candidate
                // always scored.
                (None, None) => unreachable!("feasible set cannot be empty"),
            };
            if i < t {
                let a = sample_categorical(rng, chosen.probs());
                let c = counts[a];
                let delta_e = 1.0 / (c as f64 + 2.0) - 1.0 / (c as f64 + 1.0);
                for (p, pi) in self.policies.iter().enumerate() {
                    explore[p] += pi.probs()[a] * delta_e;
                }
                counts[a] += 1;
                log.push(CfStep {
                    policy: chosen.clone(),
                    action: Some(a),
                });
            } else {
                log.push(CfStep {
                    policy: chosen.clone(),
                    action: None,
                });
            }
        }

        let last = self.per_round.last().expect("frozen above");
        Ok(RoundDecision {
            policy: chosen,
            beta: last.beta,
            conf_members: mask_members(last.conf_mask, self.n_g),
            ball_members: mask_members(last.ball_mask, self.n_g),
            counterfactuals: log,
        })
    }
}

/// Potential-lemma check over a full action sequence (1-based rounds, K
/// warm-up rounds first): `sum_{t=K+1}^T 1 / #{j < t : a_j = a_t}` against
/// `K + K log(T / K)`. Warm-up must have touched every action so the
/// denominators stay positive.
pub fn potential_lemma_check(actions: &[usize], k: usize) -> Result<LemmaCheck> {
    if k == 0 || actions.len() < k {
        return Err(Error::Parameter {
            name: "actions",
            detail: format!("need at least K = {k} rounds, got {}", actions.len()),
        });
    }
    let mut counts = vec![0usize; k];
    for &a in &actions[..k] {
        if a >= k {
            return Err(Error::Parameter {
                name: "actions",
                detail: format!("action {a} out of range"),
            });
        }
        counts[a] += 1;
    }
    let mut lhs = 0.0;
    for &a in &actions[k..] {
        if a >= k {
            return Err(Error::Parameter {
                name: "actions",
                detail: format!("action {a} out of range"),
            });
        }
        if counts[a] == 0 {
            return Err(Error::Parameter {
                name: "actions",
                detail: format!("action {a} unseen before its post-warm-up play"),
            });
        }
        lhs += 1.0 / counts[a] as f64;
        counts[a] += 1;
    }
    let t = actions.len() as f64;
    let kf = k as f64;
    Ok(LemmaCheck {
        lhs,
        rhs: kf + kf * (t / kf).ln(),
    })
}
