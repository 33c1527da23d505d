//! Distribution carriers and metric-like divergences between them.
//!
//! Three carriers cover every model class in this crate:
//!
//! | carrier        | support                  | used by                      |
//! |----------------|--------------------------|------------------------------|
//! | `DiscreteDist` | finite shared value grid | finite classes, Dirac costs  |
//! | `GaussianDist` | the real line            | Gaussian linear classes      |
//! | `GridDensity`  | compact interval, grid   | linear mixture classes       |
//!
//! Naming convention: TV and L² are exposed unsquared, Hellinger is exposed
//! squared (`hellinger_sq_*`). Callers square or take roots as needed; the
//! [`Metric`] enum does exactly that bridging for the decision engine, whose
//! confidence sums live in squared units while amplitudes live in unsquared
//! units.
//!
//! A divergence D is *metric-like* with constant `C_D >= 1` when it is
//! symmetric, nonnegative, zero on the diagonal, and satisfies the relaxed
//! triangle inequality `D(p, r) <= C_D * (D(p, q) + D(q, r))`. TV, unsquared
//! Hellinger and L² are true metrics (`C_D = 1`); squared Hellinger needs
//! `C_D = 2`. [`check_metric_like`] verifies all four axioms empirically on
//! sampled triples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sample_categorical;

/// Tolerance for probability vectors summing to one.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Tolerance for the trapezoid integral of a grid density.
pub const GRID_INTEGRAL_TOL: f64 = 1e-8;
/// Tolerance when matching an observed outcome to a discrete support value.
pub const SUPPORT_MATCH_TOL: f64 = 1e-9;

/// Finite distribution over a shared, strictly increasing value grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.len() != probs.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                actual: probs.len(),
            });
        }
        if values.is_empty() {
            return Err(Error::NotADensity {
                detail: "empty support".into(),
            });
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::NotADensity {
                detail: "support values must be strictly increasing".into(),
            });
        }
        if probs.iter().any(|&p| p < -SIMPLEX_TOL || !p.is_finite()) {
            return Err(Error::NotADensity {
                detail: "negative or non-finite probability mass".into(),
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotADensity {
                detail: format!("probabilities sum to {sum}, expected 1"),
            });
        }
        let probs = probs.into_iter().map(|p| p.max(0.0)).collect();
        Ok(Self { values, probs })
    }

    /// Bernoulli law on the canonical support `{0, 1}`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter {
                name: "p",
                detail: format!("{p} outside [0, 1]"),
            });
        }
        Self::new(vec![0.0, 1.0], vec![1.0 - p, p])
    }

    /// Point mass at `values[index]` on the shared support `values`.
    pub fn point_mass(values: Vec<f64>, index: usize) -> Result<Self> {
        if index >= values.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                actual: index,
            });
        }
        let mut probs = vec![0.0; values.len()];
        probs[index] = 1.0;
        Self::new(values, probs)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn same_support(&self, other: &Self) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        for (a, b) in self.values.iter().zip(other.values.iter()) {
            if (a - b).abs() > 1e-12 {
                return Err(Error::GridMismatch {
                    detail: format!("support values {a} vs {b}"),
                });
            }
        }
        Ok(())
    }

    pub fn prob_at(&self, y: f64) -> Result<f64> {
        for (v, p) in self.values.iter().zip(self.probs.iter()) {
            if (v - y).abs() <= SUPPORT_MATCH_TOL {
                return Ok(*p);
            }
        }
        Err(Error::OutsideSupport { y })
    }
}

/// Univariate Gaussian with strictly positive standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDist {
    pub mean: f64,
    pub sigma: f64,
}

impl GaussianDist {
    pub fn new(mean: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mean.is_finite() {
            return Err(Error::Parameter {
                name: "sigma",
                detail: format!("need finite mean and sigma > 0, got mean={mean}, sigma={sigma}"),
            });
        }
        Ok(Self { mean, sigma })
    }

    pub fn pdf(&self, y: f64) -> f64 {
        let z = (y - self.mean) / self.sigma;
        (-0.5 * z * z).exp() / (self.sigma * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// Nonnegative density tabulated on a uniform grid over a unit-measure
/// interval, integrating to one under the trapezoid rule. Values between
/// nodes are linear interpolants, so trapezoid integrals are exact for the
/// represented function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if !(hi > lo) || ((hi - lo) - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter {
                name: "support",
                detail: format!("[{lo}, {hi}] must be an interval of measure 1"),
            });
        }
        if values.len() < 2 {
            return Err(Error::NotADensity {
                detail: "grid needs at least 2 nodes".into(),
            });
        }
        if values.iter().any(|&v| v < -1e-12 || !v.is_finite()) {
            return Err(Error::NotADensity {
                detail: "negative or non-finite grid value".into(),
            });
        }
        let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
        let integral = trapezoid(&values, (hi - lo) / (values.len() - 1) as f64);
        if (integral - 1.0).abs() > GRID_INTEGRAL_TOL {
            return Err(Error::NotADensity {
                detail: format!("trapezoid integral {integral}, expected 1"),
            });
        }
        Ok(Self { lo, hi, values })
    }

    /// Build from raw nonnegative samples of an unnormalized shape function,
    /// rescaling so the trapezoid integral is exactly one.
    pub fn from_shape(lo: f64, hi: f64, shape: Vec<f64>) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::NotADensity {
                detail: "grid needs at least 2 nodes".into(),
            });
        }
        let h = (hi - lo) / (shape.len() - 1) as f64;
        let mass = trapezoid(&shape, h);
        if !(mass > 0.0) {
            return Err(Error::NotADensity {
                detail: "shape has zero total mass".into(),
            });
        }
        Self::new(lo, hi, shape.into_iter().map(|v| v / mass).collect())
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.values.len() - 1) as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.step();
        (0..self.values.len()).map(move |i| self.lo + h * i as f64)
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        if (self.lo - other.lo).abs() > 1e-12 || (self.hi - other.hi).abs() > 1e-12 {
            return Err(Error::GridMismatch {
                detail: format!(
                    "supports [{}, {}] vs [{}, {}]",
                    self.lo, other.lo, self.hi, other.hi
                ),
            });
        }
        Ok(())
    }

    pub fn density_at(&self, y: f64) -> Result<f64> {
        if y < self.lo - 1e-12 || y > self.hi + 1e-12 {
            return Err(Error::OutsideSupport { y });
        }
        let h = self.step();
        let pos = ((y - self.lo) / h).clamp(0.0, (self.values.len() - 1) as f64);
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let frac = pos - i as f64;
        Ok(self.values[i] * (1.0 - frac) + self.values[i + 1] * frac)
    }

    /// Inverse-CDF sample. The density is piecewise linear, so the CDF is
    /// piecewise quadratic and each segment inverts in closed form.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let h = self.step();
        let n = self.values.len();
        let mut cum = Vec::with_capacity(n);
        cum.push(0.0);
        for i in 1..n {
            let seg = 0.5 * h * (self.values[i - 1] + self.values[i]);
            cum.push(cum[i - 1] + seg);
        }
        let total = cum[n - 1];
        let target: f64 = rng.gen::<f64>() * total;
        let mut i = match cum.binary_search_by(|c| c.partial_cmp(&target).unwrap()) {
            Ok(k) => k,
            Err(k) => k.saturating_sub(1),
        };
        i = i.min(n - 2);
        let m = target - cum[i];
        let v0 = self.values[i];
        let dv = self.values[i + 1] - v0;
        let xi = if dv.abs() < 1e-14 {
            if v0 > 0.0 {
                m / (h * v0)
            } else {
                0.5
            }
        } else {
            let disc = (v0 * v0 + 2.0 * dv * m / h).max(0.0);
            (disc.sqrt() - v0) / dv
        };
        self.lo + h * (i as f64 + xi.clamp(0.0, 1.0))
    }
}

/// Trapezoid rule on uniformly spaced samples with step `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let sum: f64 = values.iter().sum();
    h * (sum - 0.5 * (values[0] + values[values.len() - 1]))
}

/// A conditional law produced by some model class at one context-action pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Density {
    Discrete(DiscreteDist),
    Gaussian(GaussianDist),
    Grid(GridDensity),
}

impl Density {
    pub fn family(&self) -> &'static str {
        match self {
            Density::Discrete(_) => "discrete",
            Density::Gaussian(_) => "gaussian",
            Density::Grid(_) => "grid",
        }
    }

    /// Density (or mass) at `y`; outside-support points are an error.
    pub fn density_at(&self, y: f64) -> Result<f64> {
        match self {
            Density::Discrete(d) => d.prob_at(y),
            Density::Gaussian(g) => Ok(g.pdf(y)),
            Density::Grid(g) => g.density_at(y),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Density::Discrete(d) => d.values()[sample_categorical(rng, d.probs())],
            Density::Gaussian(g) => {
                use rand_distr::Distribution;
                rand_distr::Normal::new(g.mean, g.sigma)
                    .expect("validated at construction")
                    .sample(rng)
            }
            Density::Grid(g) => g.sample(rng),
        }
    }
}

/// Total variation between finite distributions on a shared support.
pub fn tv_distance(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    p.same_support(q)?;
    let sum: f64 = p
        .probs
        .iter()
        .zip(q.probs.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(0.5 * sum)
}

/// Squared Hellinger distance between finite distributions on a shared
/// support: `1 - sum_i sqrt(p_i q_i)`, computed in the equivalent form
/// `1/2 * sum_i (sqrt(p_i) - sqrt(q_i))^2` so the diagonal is exactly zero.
pub fn hellinger_sq_discrete(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    p.same_support(q)?;
    let half_sq: f64 = p
        .probs
        .iter()
        .zip(q.probs.iter())
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((0.5 * half_sq).min(1.0))
}

/// Squared Hellinger distance between univariate Gaussians. With equal
/// standard deviation sigma this reduces to
/// `1 - exp(-(mu_f - mu_g)^2 / (8 sigma^2))`; the general closed form below
/// extends it to unequal deviations and agrees exactly on the equal case.
pub fn hellinger_sq_gaussian(f: &GaussianDist, g: &GaussianDist) -> Result<f64> {
    let (s1, s2) = (f.sigma, g.sigma);
    let var_sum = s1 * s1 + s2 * s2;
    let dm = f.mean - g.mean;
    let bc = (2.0 * s1 * s2 / var_sum).sqrt() * (-dm * dm / (4.0 * var_sum)).exp();
    Ok((1.0 - bc).clamp(0.0, 1.0))
}

/// L² distance between grid densities on a matching grid: the square root of
/// the trapezoid integral of the squared pointwise difference.
pub fn l2_distance(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    f.same_grid(g)?;
    let sq: Vec<f64> = f
        .values
        .iter()
        .zip(g.values.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    Ok(trapezoid(&sq, f.step()).max(0.0).sqrt())
}

/// Divergence identifiers used in declarative specs. TV and L² are the
/// unsquared quantities; `HellingerSq` is squared (hence `C_D = 2`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    Tv,
    HellingerSq,
    L2,
}

/// A divergence together with its relaxed-triangle constant and value cap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    /// Relaxed triangle constant, at least 1.
    pub c_d: f64,
    /// Largest attainable value: 1 for TV and squared Hellinger, a
    /// class-specific bound for L².
    pub cap: f64,
}

impl DivergenceSpec {
    pub fn tv() -> Self {
        Self {
            kind: DivergenceKind::Tv,
            c_d: 1.0,
            cap: 1.0,
        }
    }

    pub fn hellinger_sq() -> Self {
        Self {
            kind: DivergenceKind::HellingerSq,
            c_d: 2.0,
            cap: 1.0,
        }
    }

    /// L² spec for grid densities whose values are bounded by `value_bound`;
    /// the distance between two such densities on a unit-measure support is
    /// then at most `2 * value_bound`.
    pub fn l2(value_bound: f64) -> Self {
        Self {
            kind: DivergenceKind::L2,
            c_d: 1.0,
            cap: 2.0 * value_bound,
        }
    }

    pub fn eval(&self, p: &Density, q: &Density) -> Result<f64> {
        eval_divergence(self.kind, p, q)
    }
}

/// Evaluate a named divergence on matching carriers.
pub fn eval_divergence(kind: DivergenceKind, p: &Density, q: &Density) -> Result<f64> {
    match (kind, p, q) {
        (DivergenceKind::Tv, Density::Discrete(a), Density::Discrete(b)) => tv_distance(a, b),
        (DivergenceKind::HellingerSq, Density::Discrete(a), Density::Discrete(b)) => {
            hellinger_sq_discrete(a, b)
        }
        (DivergenceKind::HellingerSq, Density::Gaussian(a), Density::Gaussian(b)) => {
            hellinger_sq_gaussian(a, b)
        }
        (DivergenceKind::L2, Density::Grid(a), Density::Grid(b)) => l2_distance(a, b),
        (_, p, q) if p.family() != q.family() => Err(Error::FamilyMismatch {
            left: p.family(),
            right: q.family(),
        }),
        (kind, p, _) => Err(Error::UnsupportedDivergence {
            divergence: match kind {
                DivergenceKind::Tv => "tv",
                DivergenceKind::HellingerSq => "hellinger_sq",
                DivergenceKind::L2 => "l2",
            },
            family: p.family(),
        }),
    }
}

/// The unsquared, metric-like divergence driving confidence sums and
/// amplitudes in the decision engine. Confidence sums use `d_sq`, amplitudes
/// use `d`; for Hellinger the squared form is the native evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Tv,
    Hellinger,
    L2,
}

impl Metric {
    /// Squared distance, the unit of confidence-set radii.
    pub fn d_sq(&self, p: &Density, q: &Density) -> Result<f64> {
        match self {
            Metric::Tv => eval_divergence(DivergenceKind::Tv, p, q).map(|d| d * d),
            Metric::Hellinger => eval_divergence(DivergenceKind::HellingerSq, p, q),
            Metric::L2 => eval_divergence(DivergenceKind::L2, p, q).map(|d| d * d),
        }
    }

    /// Unsquared distance, the unit of amplitudes.
    pub fn d(&self, p: &Density, q: &Density) -> Result<f64> {
        match self {
            Metric::Tv => eval_divergence(DivergenceKind::Tv, p, q),
            Metric::Hellinger => {
                eval_divergence(DivergenceKind::HellingerSq, p, q).map(f64::sqrt)
            }
            Metric::L2 => eval_divergence(DivergenceKind::L2, p, q),
        }
    }

    /// Value cap for TV and Hellinger; L² caps depend on the class's declared
    /// value bound, which the caller must supply.
    pub fn cap_hint(&self) -> Option<f64> {
        match self {
            Metric::Tv | Metric::Hellinger => Some(1.0),
            Metric::L2 => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Tv => "tv",
            Metric::Hellinger => "hellinger",
            Metric::L2 => "l2",
        }
    }
}

/// Empirical maxima over sampled triples for the four metric-like axioms.
/// All fields are worst cases; a clean divergence reports zeros (up to
/// floating-point dust) for the first two and `max_triangle_excess <= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricLikeReport {
    pub n_triples: usize,
    pub max_symmetry_gap: f64,
    pub max_self_distance: f64,
    pub min_value: f64,
    pub max_value: f64,
    /// Worst `D(p, r) - C_D * (D(p, q) + D(q, r))` over the triples.
    pub max_triangle_excess: f64,
}

impl MetricLikeReport {
    pub fn passes(&self, tol: f64, cap: f64) -> bool {
        self.max_symmetry_gap <= tol
            && self.max_self_distance <= tol
            && self.min_value >= -tol
            && self.max_value <= cap + tol
            && self.max_triangle_excess <= tol
    }
}

/// Check the metric-like axioms for an arbitrary distance function on
/// sampled triples. Used directly for derived distances (e.g. unsquared
/// Hellinger as the root of the squared form).
pub fn check_metric_like_fn<T, D>(c_d: f64, dist: D, triples: &[(T, T, T)]) -> Result<MetricLikeReport>
where
    D: Fn(&T, &T) -> Result<f64>,
{
    if c_d < 1.0 {
        return Err(Error::Parameter {
            name: "c_d",
            detail: format!("{c_d} < 1"),
        });
    }
    let mut report = MetricLikeReport {
        n_triples: triples.len(),
        max_symmetry_gap: 0.0,
        max_self_distance: 0.0,
        min_value: f64::INFINITY,
        max_value: f64::NEG_INFINITY,
        max_triangle_excess: f64::NEG_INFINITY,
    };
    for (p, q, r) in triples {
        let d_pq = dist(p, q)?;
        let d_qp = dist(q, p)?;
        let d_qr = dist(q, r)?;
        let d_pr = dist(p, r)?;
        let d_pp = dist(p, p)?;
        report.max_symmetry_gap = report.max_symmetry_gap.max((d_pq - d_qp).abs());
        report.max_self_distance = report.max_self_distance.max(d_pp.abs());
        for d in [d_pq, d_qr, d_pr] {
            report.min_value = report.min_value.min(d);
            report.max_value = report.max_value.max(d);
        }
        report.max_triangle_excess = report
            .max_triangle_excess
            .max(d_pr - c_d * (d_pq + d_qr));
    }
    if triples.is_empty() {
        report.min_value = 0.0;
        report.max_value = 0.0;
        report.max_triangle_excess = 0.0;
    }
    Ok(report)
}

/// Check the metric-like axioms of a declared divergence spec on sampled
/// density triples (all triples must share the spec's carrier family).
pub fn check_metric_like(
    spec: &DivergenceSpec,
    triples: &[(Density, Density, Density)],
) -> Result<MetricLikeReport> {
    check_metric_like_fn(spec.c_d, |p, q| eval_divergence(spec.kind, p, q), triples)
}
