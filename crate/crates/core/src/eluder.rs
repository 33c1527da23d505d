//! Generalized eluder dimension: dependence testing, greedy certification,
//! amplitudes, the three closed-form upper bounds, and the two structural
//! lemmas the experiment harness checks on every trajectory.
//!
//! Dependence is always relative to a finite discretization grid of the
//! class. That makes [`is_eps_dependent`] sound for the grid it is given: a
//! coarser grid can only shorten independent sequences, so greedy lengths
//! stay valid lower bounds and never threaten the closed-form upper bounds.

use serde::{Deserialize, Serialize};

use crate::divergence::Metric;
use crate::error::{Error, Result};
use crate::models::DensityTable;
use crate::LemmaCheck;

/// Finite discretization of a model class, with all pairwise squared
/// divergences precomputed per context-action cell.
#[derive(Clone, Debug)]
pub struct ModelPairGrid {
    tables: Vec<DensityTable>,
    metric: Metric,
    n_contexts: usize,
    n_actions: usize,
    /// `d2[pair_index(i, j) * n_cells + x * n_actions + a]`.
    d2: Vec<f64>,
}

impl ModelPairGrid {
    pub fn new(tables: Vec<DensityTable>, metric: Metric) -> Result<Self> {
        let first = tables.first().ok_or(Error::EmptyCandidates {
            detail: "model grid needs at least one member".into(),
        })?;
        let (nx, na) = (first.n_contexts(), first.n_actions());
        for t in &tables[1..] {
            if !t.same_shape(first) {
                return Err(Error::DimensionMismatch {
                    expected: nx * na,
                    actual: t.n_contexts() * t.n_actions(),
                });
            }
        }
        for i in 0..tables.len() {
            for j in (i + 1)..tables.len() {
                if tables[i] == tables[j] {
                    return Err(Error::Parameter {
                        name: "tables",
                        detail: format!("members {i} and {j} are identical"),
                    });
                }
            }
        }
        let m = tables.len();
        let n_cells = nx * na;
        let mut d2 = vec![0.0; m * (m - 1) / 2 * n_cells];
        let mut k = 0;
        for i in 0..m {
            for j in (i + 1)..m {
                for x in 0..nx {
                    for a in 0..na {
                        d2[k * n_cells + x * na + a] =
                            metric.d_sq(tables[i].get(x, a), tables[j].get(x, a))?;
                    }
                }
                k += 1;
            }
        }
        Ok(Self {
            tables,
            metric,
            n_contexts: nx,
            n_actions: na,
            d2,
        })
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn tables(&self) -> &[DensityTable] {
        &self.tables
    }

    fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        let m = self.tables.len();
        i * (2 * m - i - 1) / 2 + (j - i - 1)
    }

    /// Precomputed squared divergence between members `i < j` at a cell.
    pub fn d_sq_at(&self, i: usize, j: usize, x: usize, a: usize) -> f64 {
        let n_cells = self.n_contexts * self.n_actions;
        self.d2[self.pair_index(i, j) * n_cells + x * self.n_actions + a]
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.tables.len();
        (0..m).flat_map(move |i| ((i + 1)..m).map(move |j| (i, j)))
    }
}

/// True iff the candidate point is epsilon-dependent on the history: no
/// member pair keeps its summed squared divergence over the history within
/// `eps^2` while still separating the candidate by more than `eps`.
pub fn is_eps_dependent(
    grid: &ModelPairGrid,
    history: &[(usize, usize)],
    candidate: (usize, usize),
    eps: f64,
) -> Result<bool> {
    if !(eps > 0.0) {
        return Err(Error::Parameter {
            name: "eps",
            detail: format!("{eps} must be positive"),
        });
    }
    let eps_sq = eps * eps;
    for (i, j) in grid.pairs() {
        if grid.d_sq_at(i, j, candidate.0, candidate.1) <= eps_sq {
            continue;
        }
        let along: f64 = history
            .iter()
            .map(|&(x, a)| grid.d_sq_at(i, j, x, a))
            .sum();
        if along <= eps_sq {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    LowerBoundGreedy,
    UpperBoundClosedForm,
}

/// A replayable witness for a dimension estimate: greedy certificates carry
/// the independent sequence itself, closed-form ones just the value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EluderCertificate {
    pub epsilon: f64,
    pub sequence: Vec<(usize, usize)>,
    pub kind: CertificateKind,
    pub value: f64,
}

/// Greedy lower bound on the dimension: repeatedly append the first pool
/// point (canonical order) that is epsilon-independent of the prefix,
/// rescanning from the front after each append. Dependence never un-happens
/// as the prefix grows, so the scan terminates; points already appended are
/// automatically dependent and never repeat.
pub fn eluder_dim_greedy(
    grid: &ModelPairGrid,
    point_pool: &[(usize, usize)],
    eps: f64,
) -> Result<EluderCertificate> {
    let mut sequence: Vec<(usize, usize)> = Vec::new();
    loop {
        let mut appended = false;
        for &z in point_pool {
            if !is_eps_dependent(grid, &sequence, z, eps)? {
                sequence.push(z);
                appended = true;
                break;
            }
        }
        if !appended {
            break;
        }
    }
    Ok(EluderCertificate {
        epsilon: eps,
        value: sequence.len() as f64,
        sequence,
        kind: CertificateKind::LowerBoundGreedy,
    })
}

/// The witness pair attaining a confidence set's amplitude at one cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Amplitude {
    /// Unsquared divergence between the witnesses.
    pub omega: f64,
    pub witnesses: (usize, usize),
}

/// Exact amplitude of a member subset at `(x, a)`: the largest pairwise
/// divergence, with the maximizing pair. Singletons have amplitude zero.
pub fn amplitude(
    grid: &ModelPairGrid,
    members: &[usize],
    x: usize,
    a: usize,
) -> Result<Amplitude> {
    let first = *members.first().ok_or(Error::EmptyCandidates {
        detail: "amplitude of an empty member set".into(),
    })?;
    let mut best = Amplitude {
        omega: 0.0,
        witnesses: (first, first),
    };
    for (p, &i) in members.iter().enumerate() {
        for &j in &members[(p + 1)..] {
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            let d = grid.d_sq_at(lo, hi, x, a).sqrt();
            if d > best.omega {
                best = Amplitude {
                    omega: d,
                    witnesses: (lo, hi),
                };
            }
        }
    }
    Ok(best)
}

const E_RATIO: f64 = std::f64::consts::E / (std::f64::consts::E - 1.0);

/// Closed-form dimension bound for linear mixture classes with parameter
/// norm `R`, basis size `S`, and regularity level `alpha` in (1/2, 1):
/// `A/(A-1) * e/(e-1) * (log(1 + 8 R^2 S^2 (1/alpha - 1) / ((2 - 1/alpha) eps^2))
///  + log(A/(A-1)))` with `A = 3 alpha - 2 alpha^2`.
pub fn bound_linear(r: f64, s: f64, alpha: f64, eps: f64) -> Result<f64> {
    if !(r > 0.0 && s > 0.0 && eps > 0.0) {
        return Err(Error::Parameter {
            name: "bound_linear",
            detail: "R, S, eps must be positive".into(),
        });
    }
    if !(alpha > 0.5 && alpha <= 1.0) {
        return Err(Error::Parameter {
            name: "alpha",
            detail: format!("{alpha} outside (1/2, 1]"),
        });
    }
    let a = 3.0 * alpha - 2.0 * alpha * alpha;
    if a <= 1.0 {
        // Only alpha = 1 lands here inside the admissible interval; the
        // prefactor A/(A-1) is undefined there.
        return Err(Error::Parameter {
            name: "alpha",
            detail: format!("3a - 2a^2 = {a} must exceed 1"),
        });
    }
    let prefactor = a / (a - 1.0);
    let inv = 1.0 / alpha;
    let main_log = (1.0 + 8.0 * r * r * s * s * (inv - 1.0) / ((2.0 - inv) * eps * eps)).ln();
    Ok(prefactor * E_RATIO * (main_log + prefactor.ln()))
}

/// Closed-form dimension bound for Gaussian linear-mean classes:
/// `d (1 + 2 db) e/(e-1) (log(1 + 4/eps^2) + log(1 + 2 db)) + 1`, where `db`
/// is the proof's curvature constant. For the equal-sigma Hellinger family,
/// `db = 1 / (8 sigma_lo^2)`, which dominates the linearization scale
/// exactly when `sigma_lo <= 1/sqrt(8)`.
pub fn bound_gaussian(delta_bar: f64, d: usize, eps: f64) -> Result<f64> {
    if !(delta_bar > 0.0 && eps > 0.0) || d == 0 {
        return Err(Error::Parameter {
            name: "bound_gaussian",
            detail: "delta_bar, eps positive and d >= 1 required".into(),
        });
    }
    let w = 1.0 + 2.0 * delta_bar;
    Ok(d as f64 * w * E_RATIO * ((1.0 + 4.0 / (eps * eps)).ln() + w.ln()) + 1.0)
}

/// Closed-form dimension bound for one-parameter exponential families with
/// coefficient radius `beta`, curvature floor `lambda_lo`, and linearization
/// constant `c` (see `ExpFamilyClass::hellinger_linearization_c`):
/// `d ((1 + sqrt(1/2 + 8/(c lambda))) e/(e-1) log(1 + 2 beta / (eps^2 / 2))
///  + log(1 + sqrt(1/2 + 8/(c lambda)))) + 1`.
/// The trailing log sits outside the `e/(e-1)` prefactor.
pub fn bound_expfam(beta: f64, lambda_lo: f64, c: f64, d: usize, eps: f64) -> Result<f64> {
    if !(beta > 0.0 && lambda_lo > 0.0 && c > 0.0 && eps > 0.0) || d == 0 {
        return Err(Error::Parameter {
            name: "bound_expfam",
            detail: "all parameters must be positive".into(),
        });
    }
    let root = 1.0 + (0.5 + 8.0 / (c * lambda_lo)).sqrt();
    let main_log = (1.0 + 2.0 * beta / (0.5 * eps * eps)).ln();
    Ok(d as f64 * (root * E_RATIO * main_log + root.ln()) + 1.0)
}

fn validate_radii(omegas: &[f64], radii: &[f64]) -> Result<f64> {
    if omegas.len() != radii.len() {
        return Err(Error::DimensionMismatch {
            expected: omegas.len(),
            actual: radii.len(),
        });
    }
    for (k, pair) in radii.windows(2).enumerate() {
        if pair[1] < pair[0] {
            return Err(Error::NonMonotoneRadii {
                index: k + 1,
                value: pair[1],
            });
        }
    }
    Ok(radii.last().copied().unwrap_or(0.0))
}

/// First structural lemma: with nondecreasing confidence radii, the number
/// of rounds whose amplitude exceeds `eps` obeys
/// `sum 1{omega_t > eps} <= (4 sqrt(r_T) / eps + 1) dim`.
pub fn check_lemma_pded1(
    omegas: &[f64],
    radii: &[f64],
    eps: f64,
    dim_upper: f64,
) -> Result<LemmaCheck> {
    if !(eps > 0.0) {
        return Err(Error::Parameter {
            name: "eps",
            detail: "must be positive".into(),
        });
    }
    let r_last = validate_radii(omegas, radii)?;
    let lhs = omegas.iter().filter(|&&w| w > eps).count() as f64;
    let rhs = (4.0 * r_last.sqrt() / eps + 1.0) * dim_upper;
    Ok(LemmaCheck { lhs, rhs })
}

/// Second structural lemma: under the same conditions, the summed
/// amplitudes obey `sum omega_t <= 1/T + C min{dim, T} + 4 sqrt(dim r_T T)`,
/// with `C` the divergence cap and `T` the sequence length.
pub fn check_lemma_pded2(
    omegas: &[f64],
    radii: &[f64],
    dim_upper: f64,
    cap: f64,
) -> Result<LemmaCheck> {
    let r_last = validate_radii(omegas, radii)?;
    let t = omegas.len() as f64;
    if omegas.is_empty() {
        return Ok(LemmaCheck { lhs: 0.0, rhs: f64::INFINITY });
    }
    let lhs: f64 = omegas.iter().sum();
    let rhs = 1.0 / t + cap * dim_upper.min(t) + 4.0 * (dim_upper * r_last * t).sqrt();
    Ok(LemmaCheck { lhs, rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{
        ExpFamilyClass, ExpFamilyKind, FeatureMap, FiniteDensityClass, GaussianLinearClass,
        LinearMixtureClass, ThetaSet,
    };
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    /// One context, four actions; members differ by the per-action gaps so
    /// TV distances are exactly the gap values.
    fn two_member_grid(gaps: &[f64]) -> ModelPairGrid {
        let base: Vec<Vec<f64>> = vec![vec![0.5; gaps.len()]];
        let shifted: Vec<Vec<f64>> = vec![gaps.iter().map(|g| 0.5 + g).collect()];
        let class = FiniteDensityClass::from_bernoulli_means(&[base, shifted]).unwrap();
        ModelPairGrid::new(class.members().to_vec(), Metric::Tv).unwrap()
    }

    #[test]
    fn empty_history_with_separated_pair_is_independent() {
        let grid = two_member_grid(&[0.3, 0.1, 0.1, 0.1]);
        // Vacuous history sum 0 <= eps^2 while the candidate separates by 0.3.
        assert!(!is_eps_dependent(&grid, &[], (0, 0), 0.2).unwrap());
        // But a candidate with gap below eps is dependent even on nothing.
        assert!(is_eps_dependent(&grid, &[], (0, 1), 0.2).unwrap());
    }

    #[test]
    fn repeated_point_is_always_dependent() {
        let grid = two_member_grid(&[0.3, 0.3, 0.3, 0.3]);
        let history = [(0, 0), (0, 1)];
        for eps in [0.05, 0.2, 0.35] {
            assert!(is_eps_dependent(&grid, &history, (0, 1), eps).unwrap());
        }
    }

    #[test]
    fn three_point_history_matches_hand_enumeration() {
        // Single pair, gaps (0.2, 0.2, 0.2, 0.36). History = first three
        // cells, candidate = the fourth. Sum over history = 0.12.
        let grid = two_member_grid(&[0.2, 0.2, 0.2, 0.36]);
        let history = [(0, 0), (0, 1), (0, 2)];
        // eps = 0.35: 0.12 <= 0.1225 and 0.36 > 0.35, so independent.
        assert!(!is_eps_dependent(&grid, &history, (0, 3), 0.35).unwrap());
        // eps = 0.30: history sum 0.12 > 0.09 disqualifies the only pair.
        assert!(is_eps_dependent(&grid, &history, (0, 3), 0.30).unwrap());
    }

    #[test]
    fn greedy_on_singleton_grid_is_empty() {
        let class = FiniteDensityClass::from_bernoulli_means(&[vec![vec![0.4, 0.6]]]).unwrap();
        let grid = ModelPairGrid::new(class.members().to_vec(), Metric::Tv).unwrap();
        let cert = eluder_dim_greedy(&grid, &[(0, 0), (0, 1)], 0.1).unwrap();
        assert_eq!(cert.sequence.len(), 0);
    }

    #[test]
    fn greedy_never_exceeds_pool_cardinality() {
        let grid = two_member_grid(&[0.4, 0.35, 0.3, 0.25]);
        // Pool repeats each cell five times; repeats are auto-dependent.
        let mut pool = Vec::new();
        for _ in 0..5 {
            for a in 0..4 {
                pool.push((0usize, a));
            }
        }
        let cert = eluder_dim_greedy(&grid, &pool, 0.05).unwrap();
        assert!(cert.sequence.len() <= 4);
        let mut dedup = cert.sequence.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), cert.sequence.len());
    }

    #[test]
    fn greedy_certificates_replay() {
        let grid = two_member_grid(&[0.4, 0.32, 0.27, 0.22]);
        for eps in [0.3, 0.2, 0.1] {
            let cert = eluder_dim_greedy(&grid, &[(0, 0), (0, 1), (0, 2), (0, 3)], eps).unwrap();
            for (k, &z) in cert.sequence.iter().enumerate() {
                assert!(
                    !is_eps_dependent(&grid, &cert.sequence[..k], z, eps).unwrap(),
                    "element {k} fails replay at eps {eps}"
                );
            }
        }
    }

    #[test]
    fn greedy_length_monotone_in_eps_on_seeded_instances() {
        let mut rng = stream(41, Purpose::InstanceBuild);
        for _ in 0..20 {
            let gaps: Vec<f64> = (0..6).map(|_| 0.05 + 0.4 * rng.gen::<f64>()).collect();
            let grid = two_member_grid(&gaps);
            let pool: Vec<(usize, usize)> = (0..6).map(|a| (0, a)).collect();
            let mut last = usize::MAX;
            for eps in [0.05, 0.1, 0.2, 0.3, 0.4] {
                let len = eluder_dim_greedy(&grid, &pool, eps).unwrap().sequence.len();
                assert!(len <= last, "length grew from {last} to {len} at eps {eps}");
                last = len;
            }
        }
    }

    #[test]
    fn amplitude_matches_hand_value_and_witnesses() {
        let class = FiniteDensityClass::from_bernoulli_means(&[
            vec![vec![0.2]],
            vec![vec![0.8]],
            vec![vec![0.5]],
        ])
        .unwrap();
        let grid = ModelPairGrid::new(class.members().to_vec(), Metric::Tv).unwrap();
        let single = amplitude(&grid, &[1], 0, 0).unwrap();
        assert_eq!(single.omega, 0.0);
        let amp = amplitude(&grid, &[0, 1, 2], 0, 0).unwrap();
        assert_abs_diff_eq!(amp.omega, 0.6, epsilon = 1e-12);
        assert_eq!(amp.witnesses, (0, 1));
    }

    #[test]
    fn amplitude_is_monotone_under_inclusion() {
        let ps: Vec<f64> = (0..8).map(|i| 0.1 + 0.1 * i as f64).collect();
        let means: Vec<Vec<Vec<f64>>> = ps.iter().map(|&p| vec![vec![p]]).collect();
        let class = FiniteDensityClass::from_bernoulli_means(&means).unwrap();
        let grid = ModelPairGrid::new(class.members().to_vec(), Metric::Tv).unwrap();
        let mut rng = stream(43, Purpose::InstanceBuild);
        for _ in 0..100 {
            let mut subset: Vec<usize> = (0..8).filter(|_| rng.gen::<bool>()).collect();
            if subset.is_empty() {
                subset.push(rng.gen_range(0..8));
            }
            let mut superset = subset.clone();
            for m in 0..8 {
                if !superset.contains(&m) && rng.gen::<bool>() {
                    superset.push(m);
                }
            }
            superset.sort_unstable();
            let small = amplitude(&grid, &subset, 0, 0).unwrap().omega;
            let large = amplitude(&grid, &superset, 0, 0).unwrap().omega;
            assert!(small <= large + 1e-15);
        }
    }

    #[test]
    fn bound_linear_frozen_value_and_reimplementation() {
        let v = bound_linear(1.0, 1.0, 0.75, 0.5).unwrap();
        assert_abs_diff_eq!(v, 71.62232055295486, epsilon = 1e-9);
        // Independent arrangement: at alpha = 3/4, A = 9/8, prefactor 9, and
        // the log argument collapses to 17.
        let again = 9.0 * E_RATIO * (17.0f64.ln() + 9.0f64.ln());
        assert_abs_diff_eq!(v, again, epsilon = 1e-12);
    }

    #[test]
    fn bound_linear_monotone_in_eps_and_domain_checked() {
        let tight = bound_linear(1.0, 1.0, 0.75, 0.1).unwrap();
        let loose = bound_linear(1.0, 1.0, 0.75, 1.0).unwrap();
        assert!(tight >= loose);
        assert!(bound_linear(1.0, 1.0, 0.5, 0.5).is_err());
        assert!(bound_linear(1.0, 1.0, 1.0, 0.5).is_err());
        assert!(bound_linear(1.0, 1.0, 1.2, 0.5).is_err());
    }

    #[test]
    fn bound_linear_parameter_term_vanishes_near_alpha_one() {
        // As alpha -> 1 the R,S-dependent log dies while the prefactor
        // blows up, so compare terms relative to the total.
        let alpha: f64 = 1.0 - 1e-9;
        let inv = 1.0 / alpha;
        let main_log = (1.0 + 8.0 * (inv - 1.0) / ((2.0 - inv) * 0.25)).ln();
        let a = 3.0 * alpha - 2.0 * alpha * alpha;
        let tail_log = (a / (a - 1.0)).ln();
        assert!(main_log / (main_log + tail_log) < 1e-6);
    }

    #[test]
    fn bound_gaussian_frozen_value_and_structure() {
        let v = bound_gaussian(2.0, 1, 0.5).unwrap();
        assert_abs_diff_eq!(v, 36.140854022557136, epsilon = 1e-9);
        // Strictly decreasing in eps, affine in d.
        assert!(bound_gaussian(2.0, 1, 0.25).unwrap() > v);
        let d1 = bound_gaussian(2.0, 3, 0.5).unwrap();
        let d2 = bound_gaussian(2.0, 6, 0.5).unwrap();
        assert_abs_diff_eq!(d2, 2.0 * (d1 - 1.0) + 1.0, epsilon = 1e-9);
        assert!(bound_gaussian(0.0, 1, 0.5).is_err());
    }

    #[test]
    fn bound_expfam_frozen_value_and_monotonicity() {
        let v = bound_expfam(1.5, 0.14914645207033286, 0.9206069521037418, 1, 0.5).unwrap();
        assert_abs_diff_eq!(v, 47.28720289158786, epsilon = 1e-9);
        // Decreasing in lambda_lo, increasing in beta.
        let lam_hi = bound_expfam(1.5, 0.25, 0.9206069521037418, 1, 0.5).unwrap();
        assert!(lam_hi < v);
        let beta_hi = bound_expfam(2.5, 0.14914645207033286, 0.9206069521037418, 1, 0.5).unwrap();
        assert!(beta_hi > v);
    }

    fn mixture_grid() -> (ModelPairGrid, LinearMixtureClass) {
        let bump = |center: f64| {
            let n = 161;
            let shape: Vec<f64> = (0..n)
                .map(|i| {
                    let y = i as f64 / (n - 1) as f64;
                    (-((y - center) / 0.09).powi(2)).exp()
                })
                .collect();
            crate::divergence::GridDensity::from_shape(0.0, 1.0, shape).unwrap()
        };
        let mut basis = Vec::new();
        for k in 0..4 {
            let jitter = 0.03 * (k % 2) as f64;
            basis.push(vec![bump(0.25 + jitter), bump(0.75 - jitter)]);
        }
        let class = LinearMixtureClass::new(2, 2, basis, 1.0).unwrap();
        let weights = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let tables: Vec<DensityTable> = weights
            .iter()
            .map(|&w| class.table(&[w, 1.0 - w]).unwrap())
            .collect();
        (ModelPairGrid::new(tables, Metric::L2).unwrap(), class)
    }

    #[test]
    fn greedy_dominated_by_linear_bound() {
        let (grid, class) = mixture_grid();
        let mut rng = stream(47, Purpose::InstanceBuild);
        let alpha = class.alpha().unwrap();
        let bound = bound_linear(class.theta_bound, class.basis_bound(), alpha, 0.1).unwrap();
        for _ in 0..10 {
            let pool: Vec<(usize, usize)> = (0..20)
                .map(|_| (rng.gen_range(0..2), rng.gen_range(0..2)))
                .collect();
            let cert = eluder_dim_greedy(&grid, &pool, 0.1).unwrap();
            assert!(
                (cert.sequence.len() as f64) <= bound,
                "greedy {} vs bound {bound}",
                cert.sequence.len()
            );
        }
    }

    #[test]
    fn greedy_dominated_by_gaussian_bound() {
        let features = FeatureMap::new(
            3,
            2,
            1,
            vec![
                vec![0.9],
                vec![0.5],
                vec![0.7],
                vec![0.3],
                vec![1.0],
                vec![0.6],
            ],
        )
        .unwrap();
        let thetas: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 / 6.0]).collect();
        let class = GaussianLinearClass::new(
            features,
            0.28,
            (0.25, 0.5),
            ThetaSet::Finite(thetas.clone()),
        )
        .unwrap();
        let tables: Vec<DensityTable> =
            thetas.iter().map(|t| class.table(t).unwrap()).collect();
        let grid = ModelPairGrid::new(tables, Metric::Hellinger).unwrap();
        let delta_bar = 1.0 / (8.0 * class.sigma_bounds.0 * class.sigma_bounds.0);
        let mut rng = stream(53, Purpose::InstanceBuild);
        for eps in [0.5, 0.25] {
            let bound = bound_gaussian(delta_bar, 1, eps).unwrap();
            for _ in 0..10 {
                let pool: Vec<(usize, usize)> = (0..25)
                    .map(|_| (rng.gen_range(0..3), rng.gen_range(0..2)))
                    .collect();
                let cert = eluder_dim_greedy(&grid, &pool, eps).unwrap();
                assert!((cert.sequence.len() as f64) <= bound);
            }
        }
    }

    #[test]
    fn greedy_dominated_by_expfam_bound() {
        let features = FeatureMap::new(
            2,
            2,
            1,
            vec![vec![1.0], vec![0.4], vec![0.7], vec![0.2]],
        )
        .unwrap();
        let class = ExpFamilyClass::new(features, ExpFamilyKind::Bernoulli, 1.5).unwrap();
        let ws: Vec<f64> = (0..6).map(|i| -1.5 + 3.0 * i as f64 / 5.0).collect();
        let tables: Vec<DensityTable> =
            ws.iter().map(|&w| class.table(&[w]).unwrap()).collect();
        let grid = ModelPairGrid::new(tables, Metric::Hellinger).unwrap();
        let (lambda_lo, _) = class.lambda_bounds();
        let c = class.hellinger_linearization_c();
        let mut rng = stream(59, Purpose::InstanceBuild);
        for eps in [0.5, 0.25] {
            let bound = bound_expfam(class.coeff_bound, lambda_lo, c, 1, eps).unwrap();
            for _ in 0..10 {
                let pool: Vec<(usize, usize)> = (0..20)
                    .map(|_| (rng.gen_range(0..2), rng.gen_range(0..2)))
                    .collect();
                let cert = eluder_dim_greedy(&grid, &pool, eps).unwrap();
                assert!((cert.sequence.len() as f64) <= bound);
            }
        }
    }

    #[test]
    fn lemma_one_edge_cases() {
        // All-zero amplitudes: lhs 0 against any rhs.
        let check = check_lemma_pded1(&[0.0; 5], &[0.1; 5], 0.25, 6.0).unwrap();
        assert_eq!(check.lhs, 0.0);
        assert!(check.holds());
        // Zero radius: rhs collapses to dim alone.
        let flat = check_lemma_pded1(&[0.3, 0.1], &[0.0, 0.0], 0.25, 6.0).unwrap();
        assert_abs_diff_eq!(flat.rhs, 6.0, epsilon = 1e-15);
        assert_eq!(flat.lhs, 1.0);
        // Decreasing radii violate the precondition.
        let err = check_lemma_pded1(&[0.0, 0.0], &[0.2, 0.1], 0.25, 6.0);
        assert!(matches!(err, Err(Error::NonMonotoneRadii { index: 1, .. })));
    }

    #[test]
    fn lemma_two_edge_cases() {
        let empty = check_lemma_pded2(&[], &[], 6.0, 1.0).unwrap();
        assert!(empty.holds());
        // One trivial round with cap 1: rhs >= 1/1 + 1 >= lhs <= cap.
        let one = check_lemma_pded2(&[0.8], &[0.5], 6.0, 1.0).unwrap();
        assert!(one.holds());
        assert_abs_diff_eq!(one.lhs, 0.8, epsilon = 1e-15);
        let err = check_lemma_pded2(&[0.0, 0.0], &[0.3, 0.2], 6.0, 1.0);
        assert!(matches!(err, Err(Error::NonMonotoneRadii { .. })));
    }

    #[test]
    fn grid_rejects_duplicates_and_empty() {
        let class = FiniteDensityClass::from_bernoulli_means(&[
            vec![vec![0.4]],
            vec![vec![0.4]],
        ])
        .unwrap();
        assert!(ModelPairGrid::new(class.members().to_vec(), Metric::Tv).is_err());
        assert!(ModelPairGrid::new(Vec::new(), Metric::Tv).is_err());
    }
}
