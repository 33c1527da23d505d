//! Offline estimation oracles and their error budgets.
//!
//! Three fitting routes: maximum likelihood over a finite class, least
//! squares for linear-mean models, and damped-Newton score-equation solving
//! for exponential families. Each successful fit is accompanied by an
//! [`OracleGuarantee`] carrying the estimation budget `est(class, n, delta)`
//! in squared-divergence units, which is what confidence-set thresholds and
//! exploration schedules consume.
//!
//! Unit convention: every `est` produced here bounds a sum of *squared*
//! Hellinger distances between the fit and the truth at the sampled design
//! points. The least-squares route also exposes the raw squared-prediction
//! budget ([`ls_prediction_budget`]) because its classical statement lives in
//! `sigma^2` units; the Hellinger version divides out `2 sigma^2` once and is
//! what [`est`] returns.

use serde::{Deserialize, Serialize};

use crate::divergence::Metric;
use crate::error::{Error, Result};
use crate::models::{DensityTable, ExpFamilyClass, FeatureMap, Functional, ThetaSet};

/// One logged interaction: context, action, outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obs {
    pub x: usize,
    pub a: usize,
    pub y: f64,
}

/// Estimation-error budget attached to a fit, in squared-divergence units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleGuarantee {
    pub est: f64,
    pub n: usize,
    pub delta: f64,
    pub divergence: Metric,
}

/// Complexity descriptor feeding the estimation budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstClass {
    /// Finite class of the given cardinality (MLE budget `ln(card / delta)`).
    FiniteCard { card: usize },
    /// Linear-Gaussian model of the given parameter dimension.
    LinearGaussian { dim: usize },
}

/// Estimation budget at confidence level `1 - delta`, squared-Hellinger units.
///
/// Finite classes get the MLE budget `ln(card / delta)`. Linear-Gaussian
/// classes get the chi-square tail budget
/// `(d + 2 sqrt(d ln(1/delta)) + 2 ln(1/delta)) / 2`, which is the
/// squared-prediction budget divided by `2 sigma^2` (sigma cancels).
pub fn est(class: EstClass, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter {
            name: "delta",
            detail: format!("{delta} must lie in (0, 1)"),
        });
    }
    match class {
        EstClass::FiniteCard { card } => {
            if card == 0 {
                return Err(Error::Parameter {
                    name: "card",
                    detail: "finite class must be nonempty".into(),
                });
            }
            Ok((card as f64 / delta).ln())
        }
        EstClass::LinearGaussian { dim } => {
            if dim == 0 {
                return Err(Error::Parameter {
                    name: "dim",
                    detail: "parameter dimension must be positive".into(),
                });
            }
            let d = dim as f64;
            let l = (1.0 / delta).ln();
            Ok((d + 2.0 * (d * l).sqrt() + 2.0 * l) / 2.0)
        }
    }
}

/// Anytime estimation budget: spends `delta' = delta / (2 t^3)` at round `t`,
/// which union-bounds over all rounds (`sum 1/(2t^3) < 1`).
pub fn est_schedule(class: EstClass, t: usize, delta: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::Parameter {
            name: "t",
            detail: "rounds are 1-based".into(),
        });
    }
    let t3 = (t as f64).powi(3);
    est(class, delta / (2.0 * t3))
}

/// Classical least-squares prediction budget in outcome units:
/// `sigma^2 (d + 2 sqrt(d ln(1/delta)) + 2 ln(1/delta))`.
pub fn ls_prediction_budget(sigma: f64, dim: usize, delta: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter {
            name: "sigma",
            detail: "must be positive".into(),
        });
    }
    Ok(2.0 * sigma * sigma * est(EstClass::LinearGaussian { dim }, delta)?)
}

/// Index of the largest score, lowest index on ties. The shared tie-breaking
/// rule for every argmax in the pipeline, so replays cannot disagree.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Log-likelihood of one table on a dataset; `None` encodes zero likelihood
/// (an observation off the member's support).
fn loglik(table: &DensityTable, data: &[Obs]) -> Result<Option<f64>> {
    let mut total = 0.0;
    for obs in data {
        match table.density_at(obs.x, obs.a, obs.y) {
            Ok(p) if p > 0.0 => total += p.ln(),
            Ok(_) => return Ok(None),
            Err(Error::OutsideSupport { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(total))
}

/// Maximum-likelihood fit over an explicit candidate list. Ties break to the
/// lowest index; members with zero likelihood never win unless all have it,
/// which is an error (the data cannot come from the class).
pub fn mle_fit(
    candidates: &[DensityTable],
    data: &[Obs],
    delta: f64,
) -> Result<(usize, OracleGuarantee)> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates {
            detail: "mle over empty candidate list".into(),
        });
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for table in candidates {
        scores.push(loglik(table, data)?.unwrap_or(f64::NEG_INFINITY));
    }
    let best = argmax_lowest(&scores);
    if scores[best] == f64::NEG_INFINITY {
        return Err(Error::NotADensity {
            detail: "every candidate assigns zero likelihood to the data".into(),
        });
    }
    let guarantee = OracleGuarantee {
        est: est(
            EstClass::FiniteCard {
                card: candidates.len(),
            },
            delta,
        )?,
        n: data.len(),
        delta,
        divergence: Metric::Hellinger,
    };
    Ok((best, guarantee))
}

/// Least-squares coefficient fit through the normal equations, Cholesky
/// factored. A singular design gets one ridge jitter of `1e-10` before we
/// give up; the jitter is never applied to well-posed problems.
pub fn least_squares_fit(features: &FeatureMap, data: &[Obs]) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let d = features.dim();
    let mut gram = nalgebra::DMatrix::<f64>::zeros(d, d);
    let mut moment = nalgebra::DVector::<f64>::zeros(d);
    for obs in data {
        let phi = features.eval(obs.x, obs.a);
        for i in 0..d {
            moment[i] += phi[i] * obs.y;
            for j in 0..d {
                gram[(i, j)] += phi[i] * phi[j];
            }
        }
    }
    let solved = gram
        .clone()
        .cholesky()
        .or_else(|| {
            let jittered = gram + nalgebra::DMatrix::identity(d, d) * 1e-10;
            jittered.cholesky()
        })
        .ok_or(Error::Parameter {
            name: "design",
            detail: "normal equations singular even after ridge jitter".into(),
        })?
        .solve(&moment);
    Ok(solved.iter().copied().collect())
}

/// Result of a score-equation solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreFit {
    pub w: Vec<f64>,
    /// Euclidean norm of the score at the returned point.
    pub residual: f64,
    pub iterations: usize,
    /// True when the coefficient-ball projection is active and no interior
    /// progress was possible; the residual then points outward and the
    /// constrained optimum sits on the boundary.
    pub on_boundary: bool,
    /// Residual norm after each accepted step, starting at the initial point.
    pub residual_history: Vec<f64>,
}

const SCORE_TOL: f64 = 1e-8;
const SCORE_MAX_ITER: usize = 100;
const SCORE_MAX_HALVINGS: usize = 30;

fn project_ball(w: &mut [f64], bound: f64) {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > bound {
        let s = bound / norm;
        for v in w.iter_mut() {
            *v *= s;
        }
    }
}

fn score_and_norm(class: &ExpFamilyClass, data: &[Obs], w: &[f64]) -> (Vec<f64>, f64) {
    let d = class.dim();
    let mut s = vec![0.0; d];
    for obs in data {
        let phi = class.features.eval(obs.x, obs.a);
        let eta = class.eta(w, obs.x, obs.a);
        let gap = class.family.suff_stat(obs.y) - class.family.grad(eta);
        for (si, p) in s.iter_mut().zip(phi.iter()) {
            *si += p * gap;
        }
    }
    let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    (s, norm)
}

/// Damped Newton solve of the exponential-family score equation
/// `sum_i phi_i (T(y_i) - A'(w . phi_i)) = 0` inside the coefficient ball.
///
/// Newton steps on the log-likelihood (whose Hessian `-sum phi phi^T A''` is
/// negative definite) with halving backtracking that only accepts strict
/// decreases of the score norm. Iterations land back in the ball by
/// projection. Stalling while the projection is active reports an honest
/// boundary solution; stalling in the interior is an [`Error::IterationLimit`].
pub fn score_equation_solve(
    class: &ExpFamilyClass,
    data: &[Obs],
    w0: &[f64],
) -> Result<ScoreFit> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let d = class.dim();
    if w0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: w0.len(),
        });
    }
    let bound = class.coeff_bound;
    let mut w = w0.to_vec();
    project_ball(&mut w, bound);
    let (mut s, mut r) = score_and_norm(class, data, &w);
    let mut history = vec![r];

    for iter in 1..=SCORE_MAX_ITER {
        if r <= SCORE_TOL {
            return Ok(ScoreFit {
                w,
                residual: r,
                iterations: iter - 1,
                on_boundary: false,
                residual_history: history,
            });
        }
        let mut hess = nalgebra::DMatrix::<f64>::zeros(d, d);
        for obs in data {
            let phi = class.features.eval(obs.x, obs.a);
            let a2 = class.family.hess(class.eta(&w, obs.x, obs.a));
            for i in 0..d {
                for j in 0..d {
                    hess[(i, j)] += phi[i] * phi[j] * a2;
                }
            }
        }
        let direction = hess
            .clone()
            .cholesky()
            .or_else(|| (hess + nalgebra::DMatrix::identity(d, d) * 1e-10).cholesky())
            .ok_or(Error::Parameter {
                name: "hessian",
                detail: "score-equation Hessian singular even after jitter".into(),
            })?
            .solve(&nalgebra::DVector::from_column_slice(&s));

        let mut gamma = 1.0;
        let mut accepted = None;
        for _ in 0..=SCORE_MAX_HALVINGS {
            let mut trial: Vec<f64> = w
                .iter()
                .zip(direction.iter())
                .map(|(wi, di)| wi + gamma * di)
                .collect();
            project_ball(&mut trial, bound);
            let (ts, tr) = score_and_norm(class, data, &trial);
            if tr < r {
                accepted = Some((trial, ts, tr));
                break;
            }
            gamma *= 0.5;
        }
        match accepted {
            Some((trial, ts, tr)) => {
                w = trial;
                s = ts;
                r = tr;
                history.push(r);
            }
            None => {
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm >= bound * (1.0 - 1e-9) {
                    return Ok(ScoreFit {
                        w,
                        residual: r,
                        iterations: iter,
                        on_boundary: true,
                        residual_history: history,
                    });
                }
                return Err(Error::IterationLimit {
                    iterations: iter,
                    residual: r,
                    last: w,
                });
            }
        }
    }
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm >= bound * (1.0 - 1e-9) {
        return Ok(ScoreFit {
            w,
            residual: r,
            iterations: SCORE_MAX_ITER,
            on_boundary: true,
            residual_history: history,
        });
    }
    Err(Error::IterationLimit {
        iterations: SCORE_MAX_ITER,
        residual: r,
        last: w,
    })
}

/// Constraint pinning candidates at the safe action: every context must give
/// `T2(g at (x, a0)) = c0` within `PIN_TOL`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafePin {
    pub action: usize,
    pub c0: f64,
    pub t2: Functional,
}

pub const PIN_TOL: f64 = 1e-9;

/// Data-driven confidence set over an explicit candidate list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    /// Indices into the candidate list, increasing.
    pub members: Vec<usize>,
    /// The squared-divergence threshold the members passed.
    pub radius: f64,
    /// True when a safe-action pin filtered the set.
    pub pinned: bool,
}

impl ConfidenceSet {
    pub fn contains(&self, idx: usize) -> bool {
        self.members.binary_search(&idx).is_ok()
    }
}

/// Build the confidence set around a fitted candidate: members whose summed
/// squared divergence to the fit along the sampled design stays within
/// `est_threshold`, intersected with the safe pin when one applies.
///
/// The fitted member always passes the divergence test (its sum is zero) but
/// can still be pinned out; an empty result is an error because downstream
/// feasibility logic has nothing to optimize over.
pub fn build_confidence_set(
    candidates: &[DensityTable],
    fitted: usize,
    data: &[Obs],
    est_threshold: f64,
    metric: Metric,
    safe_pin: Option<&SafePin>,
) -> Result<ConfidenceSet> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates {
            detail: "confidence set over empty candidate list".into(),
        });
    }
    if fitted >= candidates.len() {
        return Err(Error::Parameter {
            name: "fitted",
            detail: format!("index {fitted} out of range {}", candidates.len()),
        });
    }
    let center = &candidates[fitted];
    let mut members = Vec::new();
    'candidate: for (m, table) in candidates.iter().enumerate() {
        let mut total = 0.0;
        for obs in data {
            total += metric.d_sq(center.get(obs.x, obs.a), table.get(obs.x, obs.a))?;
            if total > est_threshold {
                continue 'candidate;
            }
        }
        if let Some(pin) = safe_pin {
            for x in 0..table.n_contexts() {
                let v = pin.t2.eval(table.get(x, pin.action))?;
                if (v - pin.c0).abs() > PIN_TOL {
                    continue 'candidate;
                }
            }
        }
        members.push(m);
    }
    if members.is_empty() {
        return Err(Error::EmptyConfidenceSet {
            detail: format!(
                "threshold {est_threshold:.6} with pin={} admits no candidate",
                safe_pin.is_some()
            ),
        });
    }
    Ok(ConfidenceSet {
        members,
        radius: est_threshold,
        pinned: safe_pin.is_some(),
    })
}

/// Uniform covering mesh of a box parameter set, fine enough that any point
/// is within model distance `1/t` of a grid point: per-axis step
/// `h = 2 / (l2 t sqrt(d))` makes the worst Euclidean offset `h sqrt(d) / 2`
/// and the Lipschitz bridge `l2 ||dtheta||` does the rest.
pub fn covering_grid(thetas: &ThetaSet, l2: f64, t: usize) -> Result<Vec<Vec<f64>>> {
    const CAP: u64 = 1_000_000;
    let (lo, hi) = match thetas {
        ThetaSet::Box { lo, hi } => (lo, hi),
        ThetaSet::Finite(list) => return Ok(list.clone()),
    };
    if !(l2 > 0.0) || t == 0 {
        return Err(Error::Parameter {
            name: "l2",
            detail: "need positive Lipschitz constant and a 1-based round".into(),
        });
    }
    let d = lo.len();
    let h = 2.0 / (l2 * t as f64 * (d as f64).sqrt());
    let mut counts = Vec::with_capacity(d);
    let mut total: u128 = 1;
    for (l, u) in lo.iter().zip(hi.iter()) {
        let span = u - l;
        let n = if span <= 0.0 {
            1
        } else {
            (span / h).ceil() as u128 + 1
        };
        total = total.saturating_mul(n);
        if total > CAP as u128 {
            return Err(Error::GridTooLarge { points: total, cap: CAP });
        }
        counts.push(n as usize);
    }
    let mut points = Vec::with_capacity(total as usize);
    let mut idx = vec![0usize; d];
    loop {
        let point: Vec<f64> = (0..d)
            .map(|k| {
                if counts[k] == 1 {
                    lo[k]
                } else {
                    lo[k] + (hi[k] - lo[k]) * idx[k] as f64 / (counts[k] - 1) as f64
                }
            })
            .collect();
        points.push(point);
        let mut k = 0;
        loop {
            if k == d {
                return Ok(points);
            }
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{Density, DiscreteDist};
    use crate::models::{ExpFamilyKind, FiniteDensityClass};
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn bern_class(ps: &[f64]) -> FiniteDensityClass {
        let means: Vec<Vec<Vec<f64>>> = ps.iter().map(|&p| vec![vec![p]]).collect();
        FiniteDensityClass::from_bernoulli_means(&means).unwrap()
    }

    fn draw_obs<R: Rng>(p: f64, n: usize, rng: &mut R) -> Vec<Obs> {
        (0..n)
            .map(|_| Obs {
                x: 0,
                a: 0,
                y: if rng.gen::<f64>() < p { 1.0 } else { 0.0 },
            })
            .collect()
    }

    #[test]
    fn est_budget_values() {
        // ln(8 / 0.1) = ln 80 and the schedule at t = 1 spends delta / 2.
        assert_abs_diff_eq!(
            est(EstClass::FiniteCard { card: 8 }, 0.1).unwrap(),
            80.0f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            est_schedule(EstClass::FiniteCard { card: 8 }, 1, 0.1).unwrap(),
            160.0f64.ln(),
            epsilon = 1e-12
        );
        let l = 10.0f64.ln();
        let expected = (2.0 + 2.0 * (2.0 * l).sqrt() + 2.0 * l) / 2.0;
        assert_abs_diff_eq!(
            est(EstClass::LinearGaussian { dim: 2 }, 0.1).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ls_budget_matches_closed_form() {
        // sigma^2 (d + 2 sqrt(d ln(1/delta)) + 2 ln(1/delta)) at (1, 2, 0.1).
        let b = ls_prediction_budget(1.0, 2, 0.1).unwrap();
        assert_abs_diff_eq!(b, 10.897102238566786, epsilon = 1e-9);
        // Hellinger-unit est is the same thing over 2 sigma^2.
        let e = est(EstClass::LinearGaussian { dim: 2 }, 0.1).unwrap();
        assert_abs_diff_eq!(b, 2.0 * e, epsilon = 1e-12);
    }

    #[test]
    fn mle_recovers_separated_member() {
        let class = bern_class(&[0.1, 0.5, 0.9]);
        let mut rng = stream(7, Purpose::EnvNoise);
        let data = draw_obs(0.9, 200, &mut rng);
        let (idx, guarantee) = mle_fit(class.members(), &data, 0.1).unwrap();
        assert_eq!(idx, 2);
        assert_eq!(guarantee.n, 200);
        assert_abs_diff_eq!(guarantee.est, 30.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn mle_breaks_ties_to_lowest_index() {
        let class = bern_class(&[0.3, 0.7, 0.7]);
        let data = vec![Obs { x: 0, a: 0, y: 1.0 }; 5];
        let (idx, _) = mle_fit(class.members(), &data, 0.1).unwrap();
        assert_eq!(idx, 1);
    }

    #[test]
    fn mle_never_selects_zero_likelihood() {
        // Member 0 puts zero mass on y = 1 and must lose despite coming first.
        let class = bern_class(&[0.0, 0.4]);
        let data = vec![
            Obs { x: 0, a: 0, y: 0.0 },
            Obs { x: 0, a: 0, y: 1.0 },
        ];
        let (idx, _) = mle_fit(class.members(), &data, 0.1).unwrap();
        assert_eq!(idx, 1);
    }

    #[test]
    fn mle_coverage_smoke() {
        // The acceptance suite runs the full 500-trial version; this guards
        // the plumbing at a lighter scale.
        let class = bern_class(&[0.1, 0.3, 0.5, 0.7, 0.9]);
        let delta = 0.1;
        let threshold = est(EstClass::FiniteCard { card: 5 }, delta).unwrap();
        let mut covered = 0;
        let trials = 60;
        for trial in 0..trials {
            let mut rng = stream(1000 + trial, Purpose::EnvNoise);
            let data = draw_obs(0.5, 50, &mut rng);
            let (idx, _) = mle_fit(class.members(), &data, delta).unwrap();
            let set = build_confidence_set(
                class.members(),
                idx,
                &data,
                threshold,
                Metric::Hellinger,
                None,
            )
            .unwrap();
            if set.contains(2) {
                covered += 1;
            }
        }
        assert!(covered >= trials * 8 / 10, "covered {covered}/{trials}");
    }

    fn features_1d() -> FeatureMap {
        FeatureMap::new(1, 1, 1, vec![vec![1.0]]).unwrap()
    }

    fn features_2d() -> FeatureMap {
        FeatureMap::new(2, 2, 2, vec![
            vec![1.0, 0.0],
            vec![0.6, 0.4],
            vec![0.2, 0.5],
            vec![0.0, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn least_squares_recovers_noiseless_coefficients() {
        let features = features_2d();
        let theta = [0.4, 0.3];
        let mut data = Vec::new();
        for x in 0..2 {
            for a in 0..2 {
                let phi = features.eval(x, a);
                let y = theta[0] * phi[0] + theta[1] * phi[1];
                data.push(Obs { x, a, y });
            }
        }
        let fit = least_squares_fit(&features, &data).unwrap();
        assert_abs_diff_eq!(fit[0], 0.4, epsilon = 1e-10);
        assert_abs_diff_eq!(fit[1], 0.3, epsilon = 1e-10);
    }

    #[test]
    fn least_squares_survives_singular_design() {
        // Both observations share one direction, leaving the Gram matrix
        // rank one; the jitter path must still return finite coefficients.
        let features = FeatureMap::new(1, 2, 2, vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let data = vec![
            Obs { x: 0, a: 0, y: 0.3 },
            Obs { x: 0, a: 1, y: 0.5 },
        ];
        let fit = least_squares_fit(&features, &data).unwrap();
        assert!(fit.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn score_solve_matches_least_squares_for_gaussian_mean() {
        let features = features_2d();
        let mut rng = stream(11, Purpose::EnvNoise);
        let mut data = Vec::new();
        for i in 0..40 {
            let (x, a) = (i % 2, (i / 2) % 2);
            let phi = features.eval(x, a);
            let y = 0.5 * phi[0] + 0.2 * phi[1] + 0.3 * (rng.gen::<f64>() - 0.5);
            data.push(Obs { x, a, y });
        }
        let class = ExpFamilyClass::new(
            features.clone(),
            ExpFamilyKind::GaussianMean { sigma: 0.7 },
            5.0,
        )
        .unwrap();
        let score = score_equation_solve(&class, &data, &[0.0, 0.0]).unwrap();
        let ls = least_squares_fit(&features, &data).unwrap();
        assert!(!score.on_boundary);
        assert!(score.residual <= SCORE_TOL);
        assert_abs_diff_eq!(score.w[0], ls[0], epsilon = 1e-6);
        assert_abs_diff_eq!(score.w[1], ls[1], epsilon = 1e-6);
    }

    #[test]
    fn score_solve_poisson_intercept_is_log_mean() {
        // Intercept-only Poisson score sum(y - e^w) = 0 gives w = ln(mean y).
        let class =
            ExpFamilyClass::new(features_1d(), ExpFamilyKind::Poisson, 3.0).unwrap();
        let counts = [2.0, 0.0, 3.0, 1.0, 1.0, 4.0, 2.0, 2.0];
        let data: Vec<Obs> = counts
            .iter()
            .map(|&y| Obs { x: 0, a: 0, y })
            .collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        let fit = score_equation_solve(&class, &data, &[0.0]).unwrap();
        assert!(!fit.on_boundary);
        assert_abs_diff_eq!(fit.w[0], mean.ln(), epsilon = 1e-7);
    }

    #[test]
    fn score_solve_reports_boundary_on_degenerate_bernoulli() {
        // All-ones data pushes the Bernoulli MLE to +infinity; the ball
        // projection must stop it at the boundary and say so.
        let class =
            ExpFamilyClass::new(features_1d(), ExpFamilyKind::Bernoulli, 2.0).unwrap();
        let data = vec![Obs { x: 0, a: 0, y: 1.0 }; 30];
        let fit = score_equation_solve(&class, &data, &[0.0]).unwrap();
        assert!(fit.on_boundary);
        assert_abs_diff_eq!(fit.w[0], 2.0, epsilon = 1e-9);
        assert!(fit.residual > SCORE_TOL);
    }

    #[test]
    fn score_residual_history_strictly_decreases() {
        let class =
            ExpFamilyClass::new(features_1d(), ExpFamilyKind::Bernoulli, 4.0).unwrap();
        let mut rng = stream(13, Purpose::EnvNoise);
        let data = draw_obs(0.7, 60, &mut rng);
        let fit = score_equation_solve(&class, &data, &[-3.0]).unwrap();
        for pair in fit.residual_history.windows(2) {
            assert!(pair[1] < pair[0], "history not decreasing: {pair:?}");
        }
        assert!(fit.residual <= SCORE_TOL);
    }

    #[test]
    fn confidence_set_filters_by_distance_and_pin() {
        // Candidates over 1 context, 2 actions; action 1 is the safe action.
        let mk = |p_main: f64, p_safe: f64| {
            DensityTable::new(
                1,
                2,
                vec![
                    Density::Discrete(DiscreteDist::bernoulli(p_main).unwrap()),
                    Density::Discrete(DiscreteDist::bernoulli(p_safe).unwrap()),
                ],
            )
            .unwrap()
        };
        let candidates = vec![mk(0.5, 0.2), mk(0.55, 0.2), mk(0.95, 0.2), mk(0.5, 0.4)];
        let data = vec![Obs { x: 0, a: 0, y: 1.0 }; 10];
        let set = build_confidence_set(
            &candidates,
            0,
            &data,
            0.1,
            Metric::Hellinger,
            None,
        )
        .unwrap();
        // 10 * D_H^2(0.5, 0.55) ~ 0.0125 passes; 10 * D_H^2(0.5, 0.95) ~ 2.6
        // fails; member 3 touches the same main cell as the center.
        assert_eq!(set.members, vec![0, 1, 3]);

        let pin = SafePin {
            action: 1,
            c0: 0.2,
            t2: Functional::mean_tv(),
        };
        let pinned = build_confidence_set(
            &candidates,
            0,
            &data,
            0.1,
            Metric::Hellinger,
            Some(&pin),
        )
        .unwrap();
        assert_eq!(pinned.members, vec![0, 1]);
        assert!(pinned.pinned);

        let err = build_confidence_set(
            &candidates,
            2,
            &data,
            1e-6,
            Metric::Hellinger,
            Some(&SafePin {
                action: 1,
                c0: 0.9,
                t2: Functional::mean_tv(),
            }),
        );
        assert!(matches!(err, Err(Error::EmptyConfidenceSet { .. })));
    }

    #[test]
    fn covering_grid_mesh_is_fine_enough() {
        let thetas = ThetaSet::Box {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        };
        let l2 = 1.0;
        let t = 10;
        let grid = covering_grid(&thetas, l2, t).unwrap();
        let h = 2.0 / (l2 * t as f64 * 2.0f64.sqrt());
        let mut rng = stream(17, Purpose::InstanceBuild);
        for _ in 0..200 {
            let p = [rng.gen::<f64>(), rng.gen::<f64>()];
            let nearest = grid
                .iter()
                .map(|g| {
                    ((g[0] - p[0]).powi(2) + (g[1] - p[1]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            // Worst offset within a cell is h sqrt(d) / 2, so the model
            // distance bridge gives l2 * that <= 1/t.
            assert!(nearest <= h * 2.0f64.sqrt() / 2.0 + 1e-12, "offset {nearest}");
            assert!(l2 * nearest <= 1.0 / t as f64 + 1e-12, "offset {nearest}");
        }
    }

    #[test]
    fn covering_grid_respects_cap() {
        let thetas = ThetaSet::Box {
            lo: vec![0.0; 4],
            hi: vec![1.0; 4],
        };
        let err = covering_grid(&thetas, 10.0, 200);
        assert!(matches!(err, Err(Error::GridTooLarge { .. })));
    }

    proptest! {
        #[test]
        fn confidence_set_grows_with_threshold(
            seed in 0u64..500,
            small in 0.01f64..0.5,
            extra in 0.01f64..2.0,
        ) {
            let class = bern_class(&[0.2, 0.35, 0.5, 0.65, 0.8]);
            let mut rng = stream(seed, Purpose::EnvNoise);
            let data = draw_obs(0.5, 25, &mut rng);
            let (idx, _) = mle_fit(class.members(), &data, 0.1).unwrap();
            let tight = build_confidence_set(
                class.members(), idx, &data, small, Metric::Hellinger, None,
            ).unwrap();
            let loose = build_confidence_set(
                class.members(), idx, &data, small + extra, Metric::Hellinger, None,
            ).unwrap();
            prop_assert!(tight.contains(idx));
            for m in &tight.members {
                prop_assert!(loose.contains(*m));
            }
        }

        #[test]
        fn mle_maximizes_loglik(seed in 0u64..200) {
            let class = bern_class(&[0.15, 0.4, 0.6, 0.85]);
            let mut rng = stream(seed, Purpose::EnvNoise);
            let data = draw_obs(0.4, 30, &mut rng);
            let (idx, _) = mle_fit(class.members(), &data, 0.1).unwrap();
            let ones = data.iter().filter(|o| o.y == 1.0).count() as f64;
            let zeros = data.len() as f64 - ones;
            for (m, p) in [0.15f64, 0.4, 0.6, 0.85].iter().enumerate() {
                let ll = ones * p.ln() + zeros * (1.0 - p).ln();
                let best = ones * [0.15f64, 0.4, 0.6, 0.85][idx].ln()
                    + zeros * (1.0 - [0.15f64, 0.4, 0.6, 0.85][idx]).ln();
                prop_assert!(best >= ll - 1e-12, "member {m} beats fit");
            }
        }
    }
}
