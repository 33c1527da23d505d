//! Model classes over context-action pairs, and the scalar functionals the
//! decision layer optimizes.
//!
//! Every class knows how to materialize a member into a [`DensityTable`]: one
//! [`Density`] per context-action cell. Downstream machinery (oracles,
//! confidence sets, eluder scans, the policy engine) works on tables only, so
//! finite classes and discretized parametric classes flow through identical
//! code paths.
//!
//! Conventions baked in here:
//! - contexts and actions are 0-based indices into finite spaces;
//! - feature vectors satisfy `||phi(x, a)||_2 <= 1`, enforced at construction
//!   by one global rescale (which preserves the geometry of the map);
//! - functionals take values in `[0, 1]` on the carriers they support, which
//!   the class constructors enforce on means and supports.

use serde::{Deserialize, Serialize};

use crate::divergence::{trapezoid, Density, DiscreteDist, GaussianDist, GridDensity, Metric};
use crate::error::{Error, Result};

/// One conditional law per context-action pair, row-major over actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    n_contexts: usize,
    n_actions: usize,
    cells: Vec<Density>,
}

impl DensityTable {
    pub fn new(n_contexts: usize, n_actions: usize, cells: Vec<Density>) -> Result<Self> {
        if cells.len() != n_contexts * n_actions || cells.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: n_contexts * n_actions,
                actual: cells.len(),
            });
        }
        let family = cells[0].family();
        if cells.iter().any(|c| c.family() != family) {
            return Err(Error::FamilyMismatch {
                left: family,
                right: "mixed cell carriers",
            });
        }
        Ok(Self {
            n_contexts,
            n_actions,
            cells,
        })
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Cell accessor; indices are validated by the constructors of whatever
    /// produced them, so out-of-range access is a programming error.
    pub fn get(&self, x: usize, a: usize) -> &Density {
        &self.cells[x * self.n_actions + a]
    }

    /// Density (or mass) of the conditional law at `(x, a)` evaluated at `y`.
    pub fn density_at(&self, x: usize, a: usize, y: f64) -> Result<f64> {
        self.get(x, a).density_at(y)
    }

    /// Draw one outcome from the conditional law at `(x, a)`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, x: usize, a: usize, rng: &mut R) -> f64 {
        self.get(x, a).sample(rng)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_contexts == other.n_contexts && self.n_actions == other.n_actions
    }
}

/// Finite feature map over a finite context-action space, `||phi||_2 <= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    n_contexts: usize,
    n_actions: usize,
    dim: usize,
    rows: Vec<Vec<f64>>,
    /// Global factor applied at construction to pull the largest row norm
    /// down to 1; recorded so callers can recover raw features if needed.
    scale: f64,
}

impl FeatureMap {
    pub fn new(
        n_contexts: usize,
        n_actions: usize,
        dim: usize,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if rows.len() != n_contexts * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_contexts * n_actions,
                actual: rows.len(),
            });
        }
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Parameter {
                name: "dim",
                detail: "feature rows must all have positive length `dim`".into(),
            });
        }
        let max_norm = rows
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        let scale = if max_norm > 1.0 { 1.0 / max_norm } else { 1.0 };
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v * scale).collect())
            .collect();
        Ok(Self {
            n_contexts,
            n_actions,
            dim,
            rows,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn eval(&self, x: usize, a: usize) -> &[f64] {
        &self.rows[x * self.n_actions + a]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Finite class of conditional-density tables sharing one carrier family and,
/// per cell, one support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteDensityClass {
    members: Vec<DensityTable>,
}

impl FiniteDensityClass {
    pub fn new(members: Vec<DensityTable>) -> Result<Self> {
        let first = members.first().ok_or(Error::EmptyCandidates {
            detail: "finite class needs at least one member".into(),
        })?;
        for m in &members[1..] {
            if !m.same_shape(first) {
                return Err(Error::DimensionMismatch {
                    expected: first.n_contexts * first.n_actions,
                    actual: m.n_contexts * m.n_actions,
                });
            }
        }
        // Divergences compare cells across members, which requires matching
        // carriers cell by cell; verify once here so later code can unwrap.
        for x in 0..first.n_contexts {
            for a in 0..first.n_actions {
                for m in &members[1..] {
                    let (p, q) = (first.get(x, a), m.get(x, a));
                    if p.family() != q.family() {
                        return Err(Error::FamilyMismatch {
                            left: p.family(),
                            right: q.family(),
                        });
                    }
                }
            }
        }
        Ok(Self { members })
    }

    /// Members given by Bernoulli mean tables: `means[m][x][a]`.
    pub fn from_bernoulli_means(means: &[Vec<Vec<f64>>]) -> Result<Self> {
        let mut members = Vec::with_capacity(means.len());
        for table in means {
            let n_contexts = table.len();
            let n_actions = table.first().map_or(0, |r| r.len());
            let mut cells = Vec::with_capacity(n_contexts * n_actions);
            for row in table {
                if row.len() != n_actions {
                    return Err(Error::DimensionMismatch {
                        expected: n_actions,
                        actual: row.len(),
                    });
                }
                for &p in row {
                    cells.push(Density::Discrete(DiscreteDist::bernoulli(p)?));
                }
            }
            members.push(DensityTable::new(n_contexts, n_actions, cells)?);
        }
        Self::new(members)
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn member(&self, i: usize) -> &DensityTable {
        &self.members[i]
    }

    pub fn members(&self) -> &[DensityTable] {
        &self.members
    }

    pub fn n_contexts(&self) -> usize {
        self.members[0].n_contexts
    }

    pub fn n_actions(&self) -> usize {
        self.members[0].n_actions
    }
}

/// Admissible parameter sets for parametric classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSet {
    /// Explicit candidate list.
    Finite(Vec<Vec<f64>>),
    /// Axis-aligned box, to be covered by a mesh at confidence-set build time.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl ThetaSet {
    pub fn dim(&self) -> usize {
        match self {
            ThetaSet::Finite(v) => v.first().map_or(0, |t| t.len()),
            ThetaSet::Box { lo, .. } => lo.len(),
        }
    }

    /// Euclidean diameter of the set (exact for boxes, pairwise max for
    /// finite lists).
    pub fn diameter(&self) -> f64 {
        match self {
            ThetaSet::Finite(v) => {
                let mut best = 0.0f64;
                for i in 0..v.len() {
                    for j in (i + 1)..v.len() {
                        let d = v[i]
                            .iter()
                            .zip(v[j].iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        best = best.max(d);
                    }
                }
                best
            }
            ThetaSet::Box { lo, hi } => lo
                .iter()
                .zip(hi.iter())
                .map(|(l, h)| (h - l) * (h - l))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// Gaussian linear-mean class: member theta has conditional law
/// `N(theta . phi(x, a), sigma^2)` with sigma known and shared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLinearClass {
    pub features: FeatureMap,
    pub sigma: f64,
    /// Declared envelope `[sigma_lo, sigma_hi]` containing `sigma`; the lower
    /// edge drives Lipschitz and eluder constants.
    pub sigma_bounds: (f64, f64),
    pub thetas: ThetaSet,
}

impl GaussianLinearClass {
    pub fn new(
        features: FeatureMap,
        sigma: f64,
        sigma_bounds: (f64, f64),
        thetas: ThetaSet,
    ) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Parameter {
                name: "sigma",
                detail: format!("{sigma} must be positive"),
            });
        }
        let (lo, hi) = sigma_bounds;
        if !(lo > 0.0 && lo <= sigma && sigma <= hi) {
            return Err(Error::Parameter {
                name: "sigma_bounds",
                detail: format!("[{lo}, {hi}] must be positive and contain sigma = {sigma}"),
            });
        }
        if thetas.dim() != features.dim() {
            return Err(Error::DimensionMismatch {
                expected: features.dim(),
                actual: thetas.dim(),
            });
        }
        if let ThetaSet::Box { lo, hi } = &thetas {
            if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
                return Err(Error::Parameter {
                    name: "thetas",
                    detail: "box lower corner exceeds upper corner".into(),
                });
            }
        }
        let class = Self {
            features,
            sigma,
            sigma_bounds,
            thetas,
        };
        // Utility functionals need means inside [0, 1]; catching a violated
        // range here beats a silent out-of-range utility mid-run.
        let (lo, hi) = class.mean_range();
        if lo < -1e-9 || hi > 1.0 + 1e-9 {
            return Err(Error::Parameter {
                name: "thetas",
                detail: format!("admissible means [{lo:.4}, {hi:.4}] leave [0, 1]"),
            });
        }
        Ok(class)
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn mean(&self, theta: &[f64], x: usize, a: usize) -> f64 {
        dot(theta, self.features.eval(x, a))
    }

    /// Range of `theta . phi(x, a)` over the admissible set and all cells.
    pub fn mean_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in 0..self.features.n_contexts() {
            for a in 0..self.features.n_actions() {
                let phi = self.features.eval(x, a);
                match &self.thetas {
                    ThetaSet::Finite(list) => {
                        for t in list {
                            let m = dot(t, phi);
                            lo = lo.min(m);
                            hi = hi.max(m);
                        }
                    }
                    ThetaSet::Box { lo: bl, hi: bh } => {
                        // Linear form over a box: extremes are coordinatewise.
                        let mut mn = 0.0;
                        let mut mx = 0.0;
                        for ((l, h), p) in bl.iter().zip(bh.iter()).zip(phi.iter()) {
                            mn += (l * p).min(h * p);
                            mx += (l * p).max(h * p);
                        }
                        lo = lo.min(mn);
                        hi = hi.max(mx);
                    }
                }
            }
        }
        (lo, hi)
    }

    /// Materialize member `theta` as a table of Gaussians.
    pub fn table(&self, theta: &[f64]) -> Result<DensityTable> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        let (nx, na) = (self.features.n_contexts(), self.features.n_actions());
        let mut cells = Vec::with_capacity(nx * na);
        for x in 0..nx {
            for a in 0..na {
                cells.push(Density::Gaussian(GaussianDist::new(
                    self.mean(theta, x, a),
                    self.sigma,
                )?));
            }
        }
        DensityTable::new(nx, na, cells)
    }

    /// Parameter-to-model Lipschitz constant for the Hellinger metric:
    /// `D_H(f_theta, f_theta') <= ||theta - theta'|| / (2 sqrt(2) sigma_lo)`,
    /// from `D_H^2 <= (gap)^2 / (8 sigma^2)` and `||phi|| <= 1`.
    pub fn l2_lipschitz(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::SQRT_2 * self.sigma_bounds.0)
    }
}

/// Linear mixture class: member theta on the probability simplex mixes `dim`
/// basis densities per cell, `f_theta(y | x, a) = sum_i theta_i phi_i(y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearMixtureClass {
    n_contexts: usize,
    n_actions: usize,
    dim: usize,
    /// Basis densities per cell, indexed `x * n_actions + a`.
    basis: Vec<Vec<GridDensity>>,
    /// Admitted parameter norm bound R (the simplex gives R = 1).
    pub theta_bound: f64,
    value_bound: f64,
    basis_bound: f64,
    kappa2_max: f64,
}

impl LinearMixtureClass {
    pub fn new(
        n_contexts: usize,
        n_actions: usize,
        basis: Vec<Vec<GridDensity>>,
        theta_bound: f64,
    ) -> Result<Self> {
        if basis.len() != n_contexts * n_actions || basis.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: n_contexts * n_actions,
                actual: basis.len(),
            });
        }
        let dim = basis[0].len();
        if dim == 0 || basis.iter().any(|b| b.len() != dim) {
            return Err(Error::Parameter {
                name: "basis",
                detail: "each cell needs the same positive number of basis densities".into(),
            });
        }
        let reference = &basis[0][0];
        for cell in &basis {
            for g in cell {
                if g.values().len() != reference.values().len()
                    || g.support() != reference.support()
                {
                    return Err(Error::GridMismatch {
                        detail: "all basis densities must share one grid".into(),
                    });
                }
            }
        }
        if !(theta_bound >= 1.0) {
            return Err(Error::Parameter {
                name: "theta_bound",
                detail: "must be at least 1 (simplex vertices have norm 1)".into(),
            });
        }
        let mut class = Self {
            n_contexts,
            n_actions,
            dim,
            basis,
            theta_bound,
            value_bound: 0.0,
            basis_bound: 0.0,
            kappa2_max: 0.0,
        };
        let mut value_bound = 0.0f64;
        let mut basis_bound_sq = 0.0f64;
        let mut kappa = 0.0f64;
        for x in 0..n_contexts {
            for a in 0..n_actions {
                let cell = class.cell_basis(x, a);
                let vb = cell
                    .iter()
                    .flat_map(|g| g.values().iter().copied())
                    .fold(0.0f64, f64::max);
                value_bound = value_bound.max(vb);
                let m = class.moment_matrix(x, a);
                let sum_diag: f64 = (0..class.dim).map(|i| m[(i, i)]).sum();
                basis_bound_sq = basis_bound_sq.max(sum_diag);
                let eigs = m.clone().symmetric_eigenvalues();
                let (mut emin, mut emax) = (f64::INFINITY, f64::NEG_INFINITY);
                for e in eigs.iter() {
                    emin = emin.min(*e);
                    emax = emax.max(*e);
                }
                if emin <= 0.0 {
                    return Err(Error::Parameter {
                        name: "basis",
                        detail: format!("second-moment matrix at ({x}, {a}) is singular"),
                    });
                }
                kappa = kappa.max(emax / emin);
            }
        }
        class.value_bound = value_bound;
        class.basis_bound = basis_bound_sq.sqrt();
        class.kappa2_max = kappa;
        Ok(class)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn cell_basis(&self, x: usize, a: usize) -> &[GridDensity] {
        &self.basis[x * self.n_actions + a]
    }

    /// Largest grid value over the basis; mixtures with simplex weights stay
    /// below it, which caps the L² distance at twice this value.
    pub fn value_bound(&self) -> f64 {
        self.value_bound
    }

    /// S with `max_(x,a) sum_i ||phi_i||_{L2}^2 = S^2`, the basis-size
    /// constant in the closed-form dimension bound.
    pub fn basis_bound(&self) -> f64 {
        self.basis_bound
    }

    /// Worst condition number of the per-cell second-moment matrices.
    pub fn kappa2_max(&self) -> f64 {
        self.kappa2_max
    }

    /// Second-moment matrix `m_ij = integral phi_i phi_j` at one cell.
    pub fn moment_matrix(&self, x: usize, a: usize) -> nalgebra::DMatrix<f64> {
        let cell = self.cell_basis(x, a);
        let h = cell[0].step();
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in i..self.dim {
                let prod: Vec<f64> = cell[i]
                    .values()
                    .iter()
                    .zip(cell[j].values().iter())
                    .map(|(a, b)| a * b)
                    .collect();
                let v = trapezoid(&prod, h);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// A regularity level alpha with `kappa_2 <= 1/alpha < 2`, required by the
    /// closed-form dimension bound. Errors when the basis is too ill
    /// conditioned to admit one.
    pub fn alpha(&self) -> Result<f64> {
        if self.kappa2_max >= 2.0 {
            return Err(Error::Parameter {
                name: "basis",
                detail: format!(
                    "condition number {:.4} >= 2 violates the regularity hypothesis",
                    self.kappa2_max
                ),
            });
        }
        // Any alpha <= 1/kappa_2 works; stay strictly inside (1/2, 1) so the
        // bound formula's denominators are well separated from zero.
        Ok((1.0 / self.kappa2_max).min(1.0 - 1e-6))
    }

    /// Materialize mixture weights `theta` (probability simplex, norm at most
    /// `theta_bound`) as a table of grid densities.
    pub fn table(&self, theta: &[f64]) -> Result<DensityTable> {
        if theta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: theta.len(),
            });
        }
        let sum: f64 = theta.iter().sum();
        if theta.iter().any(|&t| t < -1e-12) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter {
                name: "theta",
                detail: "mixture weights must lie on the probability simplex".into(),
            });
        }
        let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm > self.theta_bound + 1e-9 {
            return Err(Error::Parameter {
                name: "theta",
                detail: format!("||theta|| = {norm:.4} exceeds bound {}", self.theta_bound),
            });
        }
        let mut cells = Vec::with_capacity(self.basis.len());
        for cell in &self.basis {
            let n = cell[0].values().len();
            let (lo, hi) = cell[0].support();
            let mut vals = vec![0.0; n];
            for (w, g) in theta.iter().zip(cell.iter()) {
                for (v, gv) in vals.iter_mut().zip(g.values().iter()) {
                    *v += w * gv;
                }
            }
            cells.push(Density::Grid(GridDensity::new(lo, hi, vals)?));
        }
        DensityTable::new(self.n_contexts, self.n_actions, cells)
    }
}

/// Named one-parameter exponential families with scalar natural parameter
/// `eta = w . phi(x, a)`: `f(y) = h(y) exp(eta T(y) - A(eta))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpFamilyKind {
    /// Support {0, 1}, `T(y) = y`, `A(eta) = log(1 + e^eta)`.
    Bernoulli,
    /// Support 0, 1, 2, ..., `T(y) = y`, `A(eta) = e^eta`.
    Poisson,
    /// `N(eta, sigma^2)` with known sigma: `T(y) = y / sigma^2`,
    /// `A(eta) = eta^2 / (2 sigma^2)`.
    GaussianMean { sigma: f64 },
}

impl ExpFamilyKind {
    pub fn suff_stat(&self, y: f64) -> f64 {
        match self {
            ExpFamilyKind::Bernoulli | ExpFamilyKind::Poisson => y,
            ExpFamilyKind::GaussianMean { sigma } => y / (sigma * sigma),
        }
    }

    pub fn log_partition(&self, eta: f64) -> f64 {
        match self {
            // Stable softplus.
            ExpFamilyKind::Bernoulli => {
                if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                }
            }
            ExpFamilyKind::Poisson => eta.exp(),
            ExpFamilyKind::GaussianMean { sigma } => eta * eta / (2.0 * sigma * sigma),
        }
    }

    pub fn grad(&self, eta: f64) -> f64 {
        match self {
            ExpFamilyKind::Bernoulli => 1.0 / (1.0 + (-eta).exp()),
            ExpFamilyKind::Poisson => eta.exp(),
            ExpFamilyKind::GaussianMean { sigma } => eta / (sigma * sigma),
        }
    }

    pub fn hess(&self, eta: f64) -> f64 {
        match self {
            ExpFamilyKind::Bernoulli => {
                let s = self.grad(eta);
                s * (1.0 - s)
            }
            ExpFamilyKind::Poisson => eta.exp(),
            ExpFamilyKind::GaussianMean { sigma } => 1.0 / (sigma * sigma),
        }
    }

    /// Mean outcome `E[y]` under natural parameter `eta`.
    pub fn mean_outcome(&self, eta: f64) -> f64 {
        match self {
            ExpFamilyKind::Bernoulli | ExpFamilyKind::Poisson => self.grad(eta),
            ExpFamilyKind::GaussianMean { .. } => eta,
        }
    }

    pub fn density_at(&self, eta: f64, y: f64) -> Result<f64> {
        match self {
            ExpFamilyKind::Bernoulli => {
                if (y - 1.0).abs() <= 1e-9 {
                    Ok(self.grad(eta))
                } else if y.abs() <= 1e-9 {
                    Ok(1.0 - self.grad(eta))
                } else {
                    Err(Error::OutsideSupport { y })
                }
            }
            ExpFamilyKind::Poisson => {
                let k = y.round();
                if k < 0.0 || (y - k).abs() > 1e-9 {
                    return Err(Error::OutsideSupport { y });
                }
                let mut log_fact = 0.0;
                let mut i = 2.0;
                while i <= k {
                    log_fact += i.ln();
                    i += 1.0;
                }
                Ok((k * eta - eta.exp() - log_fact).exp())
            }
            ExpFamilyKind::GaussianMean { sigma } => {
                Ok(GaussianDist::new(eta, *sigma)?.pdf(y))
            }
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> f64 {
        use rand_distr::Distribution;
        match self {
            ExpFamilyKind::Bernoulli => {
                if rng.gen::<f64>() < self.grad(eta) {
                    1.0
                } else {
                    0.0
                }
            }
            ExpFamilyKind::Poisson => rand_distr::Poisson::new(eta.exp())
                .expect("positive rate")
                .sample(rng),
            ExpFamilyKind::GaussianMean { sigma } => rand_distr::Normal::new(eta, *sigma)
                .expect("validated sigma")
                .sample(rng),
        }
    }
}

/// Exponential-family class with coefficient ball `||w||_2 <= coeff_bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFamilyClass {
    pub features: FeatureMap,
    pub family: ExpFamilyKind,
    pub coeff_bound: f64,
    /// Curvature envelope `[lambda_lo, lambda_hi]` of `A''` over reachable
    /// natural parameters `|eta| <= coeff_bound`.
    lambda: (f64, f64),
}

impl ExpFamilyClass {
    pub fn new(features: FeatureMap, family: ExpFamilyKind, coeff_bound: f64) -> Result<Self> {
        if !(coeff_bound > 0.0) {
            return Err(Error::Parameter {
                name: "coeff_bound",
                detail: "must be positive".into(),
            });
        }
        if let ExpFamilyKind::GaussianMean { sigma } = family {
            if !(sigma > 0.0) {
                return Err(Error::Parameter {
                    name: "sigma",
                    detail: "must be positive".into(),
                });
            }
        }
        // A'' is monotone on each side of 0 for all three families, so the
        // envelope over |eta| <= beta is attained on {-beta, 0, beta}.
        let b = coeff_bound;
        let candidates = [-b, 0.0, b];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for eta in candidates {
            let h = family.hess(eta);
            lo = lo.min(h);
            hi = hi.max(h);
        }
        if !(lo > 0.0) {
            return Err(Error::Parameter {
                name: "coeff_bound",
                detail: "curvature lower bound vanishes on the reachable range".into(),
            });
        }
        Ok(Self {
            features,
            family,
            coeff_bound,
            lambda: (lo, hi),
        })
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn lambda_bounds(&self) -> (f64, f64) {
        self.lambda
    }

    pub fn eta(&self, w: &[f64], x: usize, a: usize) -> f64 {
        dot(w, self.features.eval(x, a))
    }

    /// Linearization constant c with `c x <= 1 - e^{-x}` on `[0, M]`, where
    /// `M = lambda_lo (2 beta)^2 / 8` is the largest exponent the squared
    /// Hellinger lower bound can see on this class. The secant is the
    /// tightest valid choice because `(1 - e^{-x}) / x` is decreasing.
    pub fn hellinger_linearization_c(&self) -> f64 {
        let m = self.lambda.0 * self.coeff_bound * self.coeff_bound / 2.0;
        if m < 1e-12 {
            1.0
        } else {
            (1.0 - (-m).exp()) / m
        }
    }

    /// Materialize coefficient vector `w` as a density table. Poisson members
    /// have unbounded support and no finite table; evaluate those through
    /// [`ExpFamilyKind::density_at`] instead.
    pub fn table(&self, w: &[f64]) -> Result<DensityTable> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: w.len(),
            });
        }
        let (nx, na) = (self.features.n_contexts(), self.features.n_actions());
        let mut cells = Vec::with_capacity(nx * na);
        for x in 0..nx {
            for a in 0..na {
                let eta = self.eta(w, x, a);
                match self.family {
                    ExpFamilyKind::Bernoulli => {
                        cells.push(Density::Discrete(DiscreteDist::bernoulli(
                            self.family.grad(eta),
                        )?));
                    }
                    ExpFamilyKind::GaussianMean { sigma } => {
                        cells.push(Density::Gaussian(GaussianDist::new(eta, sigma)?));
                    }
                    ExpFamilyKind::Poisson => {
                        return Err(Error::UnsupportedFunctional {
                            functional: "density table",
                            family: "poisson (unbounded support)",
                        });
                    }
                }
            }
        }
        DensityTable::new(nx, na, cells)
    }
}

/// Scalar functionals of a conditional law, with a declared Lipschitz
/// constant against a declared divergence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Mean,
    /// `1 - mean`, for losses reported on [0, 1].
    NegMean,
    Variance,
    /// Atom location of a point mass.
    DiracValue,
}

/// A functional paired with the divergence its Lipschitz constant refers to.
///
/// Canonical constants on `[0, 1]`-supported carriers (all proved by the
/// centered-integrand bound `|integral h (f - g)| <= (max h - min h) TV`):
/// - Mean/NegMean vs TV: 1 (tight at point masses on 0 and 1);
/// - Mean/NegMean vs Hellinger: sqrt(2), via `TV <= sqrt(2) D_H`;
/// - Mean/NegMean vs L²: `||y||_{L2} = 1/sqrt(3)` by Cauchy-Schwarz;
/// - Variance vs TV on width-w supports: `3 w^2`, splitting
///   `|Var f - Var g| <= |E_f y^2 - E_g y^2| + |E_f y + E_g y| |E_f y - E_g y|
///   <= w^2 TV + 2w * w TV` after shifting the support to `[0, w]`;
/// - DiracValue vs TV on [0, 1] atoms: 1 (distinct atoms have TV 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Functional {
    pub kind: FunctionalKind,
    pub lipschitz: f64,
    pub divergence: Metric,
}

impl Functional {
    pub fn new(kind: FunctionalKind, lipschitz: f64, divergence: Metric) -> Result<Self> {
        if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
            return Err(Error::Parameter {
                name: "lipschitz",
                detail: format!("{lipschitz} must be finite and nonnegative"),
            });
        }
        Ok(Self {
            kind,
            lipschitz,
            divergence,
        })
    }

    pub fn mean_tv() -> Self {
        Self {
            kind: FunctionalKind::Mean,
            lipschitz: 1.0,
            divergence: Metric::Tv,
        }
    }

    pub fn mean_hellinger() -> Self {
        Self {
            kind: FunctionalKind::Mean,
            lipschitz: std::f64::consts::SQRT_2,
            divergence: Metric::Hellinger,
        }
    }

    pub fn mean_l2() -> Self {
        Self {
            kind: FunctionalKind::Mean,
            lipschitz: 1.0 / 3.0f64.sqrt(),
            divergence: Metric::L2,
        }
    }

    pub fn neg_mean_hellinger() -> Self {
        Self {
            kind: FunctionalKind::NegMean,
            ..Self::mean_hellinger()
        }
    }

    pub fn neg_mean_tv() -> Self {
        Self {
            kind: FunctionalKind::NegMean,
            ..Self::mean_tv()
        }
    }

    pub fn variance_tv(support_width: f64) -> Self {
        Self {
            kind: FunctionalKind::Variance,
            lipschitz: 3.0 * support_width * support_width,
            divergence: Metric::Tv,
        }
    }

    pub fn dirac_tv() -> Self {
        Self {
            kind: FunctionalKind::DiracValue,
            lipschitz: 1.0,
            divergence: Metric::Tv,
        }
    }

    pub fn eval(&self, d: &Density) -> Result<f64> {
        match self.kind {
            FunctionalKind::Mean => mean_of(d),
            FunctionalKind::NegMean => Ok(1.0 - mean_of(d)?),
            FunctionalKind::Variance => variance_of(d),
            FunctionalKind::DiracValue => dirac_value_of(d),
        }
    }
}

fn mean_of(d: &Density) -> Result<f64> {
    match d {
        Density::Discrete(p) => Ok(p
            .values()
            .iter()
            .zip(p.probs().iter())
            .map(|(v, w)| v * w)
            .sum()),
        Density::Gaussian(g) => Ok(g.mean),
        Density::Grid(g) => {
            let weighted: Vec<f64> = g
                .nodes()
                .zip(g.values().iter())
                .map(|(y, v)| y * v)
                .collect();
            Ok(trapezoid(&weighted, g.step()))
        }
    }
}

fn variance_of(d: &Density) -> Result<f64> {
    match d {
        Density::Discrete(p) => {
            let m: f64 = p
                .values()
                .iter()
                .zip(p.probs().iter())
                .map(|(v, w)| v * w)
                .sum();
            let m2: f64 = p
                .values()
                .iter()
                .zip(p.probs().iter())
                .map(|(v, w)| v * v * w)
                .sum();
            Ok((m2 - m * m).max(0.0))
        }
        Density::Gaussian(_) => Err(Error::UnsupportedFunctional {
            functional: "variance",
            family: "gaussian (unbounded support)",
        }),
        Density::Grid(g) => {
            let m = mean_of(d)?;
            let weighted: Vec<f64> = g
                .nodes()
                .zip(g.values().iter())
                .map(|(y, v)| y * y * v)
                .collect();
            Ok((trapezoid(&weighted, g.step()) - m * m).max(0.0))
        }
    }
}

fn dirac_value_of(d: &Density) -> Result<f64> {
    match d {
        Density::Discrete(p) => {
            for (v, w) in p.values().iter().zip(p.probs().iter()) {
                if *w >= 1.0 - 1e-9 {
                    return Ok(*v);
                }
            }
            Err(Error::UnsupportedFunctional {
                functional: "dirac_value",
                family: "diffuse discrete",
            })
        }
        other => Err(Error::UnsupportedFunctional {
            functional: "dirac_value",
            family: other.family(),
        }),
    }
}

/// Empirical maximum of `|T(f) - T(g)| / D(f, g)` over the sampled pairs,
/// skipping pairs closer than `1e-12` in divergence. Assertion helper for
/// validating declared Lipschitz constants.
pub fn functional_lipschitz(t: &Functional, pairs: &[(Density, Density)]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (f, g) in pairs {
        let d = t.divergence.d(f, g)?;
        if d <= 1e-12 {
            continue;
        }
        let gap = (t.eval(f)? - t.eval(g)?).abs();
        worst = worst.max(gap / d);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn ber(p: f64) -> Density {
        Density::Discrete(DiscreteDist::bernoulli(p).unwrap())
    }

    fn simple_features(nx: usize, na: usize, dim: usize, f: impl Fn(usize, usize) -> Vec<f64>) -> FeatureMap {
        let mut rows = Vec::new();
        for x in 0..nx {
            for a in 0..na {
                rows.push(f(x, a));
            }
        }
        FeatureMap::new(nx, na, dim, rows).unwrap()
    }

    #[test]
    fn feature_map_normalizes_globally() {
        let map = FeatureMap::new(1, 2, 2, vec![vec![3.0, 0.0], vec![0.0, 1.5]]).unwrap();
        // One global scale 1/3 keeps the rows' relative geometry.
        assert_abs_diff_eq!(map.eval(0, 0)[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(map.eval(0, 1)[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(map.scale(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn mean_and_variance_on_discrete() {
        let t_mean = Functional::mean_tv();
        assert_abs_diff_eq!(t_mean.eval(&ber(0.3)).unwrap(), 0.3, epsilon = 1e-15);
        let t_var = Functional::variance_tv(1.0);
        assert_abs_diff_eq!(t_var.eval(&ber(0.5)).unwrap(), 0.25, epsilon = 1e-15);
        let t_neg = Functional::neg_mean_hellinger();
        assert_abs_diff_eq!(t_neg.eval(&ber(0.3)).unwrap(), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn dirac_value_reads_the_atom() {
        let t = Functional::dirac_tv();
        let d = Density::Discrete(
            DiscreteDist::point_mass(vec![0.0, 0.35, 0.8], 1).unwrap(),
        );
        assert_eq!(t.eval(&d).unwrap(), 0.35);
        assert!(t.eval(&ber(0.4)).is_err());
    }

    #[test]
    fn variance_rejects_gaussian() {
        let t = Functional::variance_tv(1.0);
        let g = Density::Gaussian(GaussianDist::new(0.5, 0.1).unwrap());
        assert!(matches!(
            t.eval(&g),
            Err(Error::UnsupportedFunctional { .. })
        ));
    }

    #[test]
    fn mean_is_affine_in_mixtures() {
        // Mean(lambda f + (1 - lambda) g) = lambda Mean(f) + (1-lambda) Mean(g).
        let t = Functional::mean_tv();
        let f = DiscreteDist::new(vec![0.0, 0.5, 1.0], vec![0.2, 0.3, 0.5]).unwrap();
        let g = DiscreteDist::new(vec![0.0, 0.5, 1.0], vec![0.6, 0.1, 0.3]).unwrap();
        for lambda in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let mixed: Vec<f64> = f
                .probs()
                .iter()
                .zip(g.probs().iter())
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            let mix = Density::Discrete(
                DiscreteDist::new(f.values().to_vec(), mixed).unwrap(),
            );
            let lhs = t.eval(&mix).unwrap();
            let rhs = lambda * t.eval(&Density::Discrete(f.clone())).unwrap()
                + (1.0 - lambda) * t.eval(&Density::Discrete(g.clone())).unwrap();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_tv_lipschitz_is_one_and_tight() {
        let mut pairs = Vec::new();
        for i in 0..=20 {
            for j in 0..=20 {
                pairs.push((ber(i as f64 / 20.0), ber(j as f64 / 20.0)));
            }
        }
        let worst = functional_lipschitz(&Functional::mean_tv(), &pairs).unwrap();
        assert!(worst <= 1.0 + 1e-12, "ratio {worst}");
        assert!(worst >= 1.0 - 1e-9, "bound should be attained, got {worst}");
    }

    #[test]
    fn mean_hellinger_lipschitz_stays_below_sqrt2() {
        let mut pairs = Vec::new();
        for i in 0..=40 {
            for j in 0..=40 {
                if i != j {
                    pairs.push((ber(i as f64 / 40.0), ber(j as f64 / 40.0)));
                }
            }
        }
        let worst = functional_lipschitz(&Functional::mean_hellinger(), &pairs).unwrap();
        assert!(worst <= std::f64::consts::SQRT_2 + 1e-9, "ratio {worst}");
        // The constant is approached near Ber(1/2); make sure we are close.
        assert!(worst > 1.39, "expected near-tight ratio, got {worst}");
    }

    #[test]
    fn mean_l2_lipschitz_stays_below_inv_sqrt3() {
        let mut rng = stream(23, Purpose::Experiment);
        let n = 65;
        let mut pairs = Vec::new();
        for _ in 0..60 {
            let mk = |rng: &mut rand_chacha::ChaCha12Rng| {
                let shape: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
                Density::Grid(GridDensity::from_shape(0.0, 1.0, shape).unwrap())
            };
            pairs.push((mk(&mut rng), mk(&mut rng)));
        }
        let worst = functional_lipschitz(&Functional::mean_l2(), &pairs).unwrap();
        assert!(worst <= 1.0 / 3.0f64.sqrt() + 1e-9, "ratio {worst}");
    }

    #[test]
    fn variance_tv_lipschitz_stays_below_3w2() {
        let mut rng = stream(29, Purpose::Experiment);
        let support = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let mut pairs = Vec::new();
        for _ in 0..200 {
            let mk = |rng: &mut rand_chacha::ChaCha12Rng| {
                let raw: Vec<f64> = (0..support.len()).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                Density::Discrete(
                    DiscreteDist::new(
                        support.clone(),
                        raw.into_iter().map(|v| v / s).collect(),
                    )
                    .unwrap(),
                )
            };
            pairs.push((mk(&mut rng), mk(&mut rng)));
        }
        let worst = functional_lipschitz(&Functional::variance_tv(1.0), &pairs).unwrap();
        assert!(worst <= 3.0 + 1e-9, "ratio {worst}");
    }

    #[test]
    fn gaussian_linear_table_at_zero_matches_standard_pdf() {
        let features = simple_features(2, 2, 2, |x, a| vec![0.3 * (x as f64 + 1.0), 0.2 * a as f64]);
        let class = GaussianLinearClass::new(
            features,
            0.5,
            (0.25, 1.0),
            ThetaSet::Box {
                lo: vec![0.0, 0.0],
                hi: vec![1.0, 1.0],
            },
        )
        .unwrap();
        let table = class.table(&[0.0, 0.0]).unwrap();
        let reference = GaussianDist::new(0.0, 0.5).unwrap();
        for y in [-0.7, 0.0, 0.4] {
            assert_abs_diff_eq!(
                table.density_at(0, 0, y).unwrap(),
                reference.pdf(y),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn gaussian_linear_rejects_out_of_range_means() {
        let features = simple_features(1, 1, 1, |_, _| vec![1.0]);
        let err = GaussianLinearClass::new(
            features,
            0.5,
            (0.25, 1.0),
            ThetaSet::Box {
                lo: vec![-1.0],
                hi: vec![1.0],
            },
        );
        assert!(err.is_err());
    }

    fn bump(center: f64, width: f64, n: usize) -> GridDensity {
        let shape: Vec<f64> = (0..n)
            .map(|i| {
                let y = i as f64 / (n - 1) as f64;
                (-((y - center) / width).powi(2)).exp()
            })
            .collect();
        GridDensity::from_shape(0.0, 1.0, shape).unwrap()
    }

    fn two_bump_mixture(nx: usize, na: usize) -> LinearMixtureClass {
        let mut basis = Vec::new();
        for x in 0..nx {
            for a in 0..na {
                let jitter = 0.04 * ((x * na + a) % 3) as f64;
                basis.push(vec![
                    bump(0.22 + jitter, 0.09, 257),
                    bump(0.78 - jitter, 0.09, 257),
                ]);
            }
        }
        LinearMixtureClass::new(nx, na, basis, 1.0).unwrap()
    }

    #[test]
    fn mixture_vertex_reproduces_basis() {
        let class = two_bump_mixture(2, 2);
        let table = class.table(&[1.0, 0.0]).unwrap();
        match table.get(1, 1) {
            Density::Grid(g) => {
                let expected = class.cell_basis(1, 1)[0].clone();
                for (a, b) in g.values().iter().zip(expected.values().iter()) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
            }
            other => panic!("expected grid cell, got {}", other.family()),
        }
    }

    #[test]
    fn mixture_rejects_off_simplex_weights() {
        let class = two_bump_mixture(1, 1);
        assert!(class.table(&[0.7, 0.7]).is_err());
        assert!(class.table(&[1.2, -0.2]).is_err());
    }

    #[test]
    fn mixture_reports_well_conditioned_basis() {
        let class = two_bump_mixture(2, 3);
        assert!(class.kappa2_max() < 2.0, "kappa {}", class.kappa2_max());
        let alpha = class.alpha().unwrap();
        assert!(alpha > 0.5 && alpha < 1.0);
        assert!(class.basis_bound() > 0.0);
        assert!(class.value_bound() > 0.0);
    }

    #[test]
    fn expfam_bernoulli_at_zero_is_fair_coin() {
        let features = simple_features(1, 1, 1, |_, _| vec![1.0]);
        let class = ExpFamilyClass::new(features, ExpFamilyKind::Bernoulli, 2.0).unwrap();
        assert_abs_diff_eq!(
            class.family.density_at(0.0, 1.0).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        let table = class.table(&[0.0]).unwrap();
        assert_abs_diff_eq!(table.density_at(0, 0, 0.0).unwrap(), 0.5, epsilon = 1e-15);
    }

    /// Finite-difference gradient of A versus the mean of T under the family:
    /// the exponential-family identity grad A(eta) = E[T(y)].
    #[test]
    fn grad_log_partition_equals_mean_suff_stat() {
        let h = 1e-5;
        for family in [
            ExpFamilyKind::Bernoulli,
            ExpFamilyKind::Poisson,
            ExpFamilyKind::GaussianMean { sigma: 0.8 },
        ] {
            for eta in [-1.5, -0.3, 0.0, 0.7, 1.2] {
                let fd = (family.log_partition(eta + h) - family.log_partition(eta - h)) / (2.0 * h);
                let mean_t = match family {
                    ExpFamilyKind::Bernoulli => family.density_at(eta, 1.0).unwrap(),
                    ExpFamilyKind::Poisson => {
                        // Truncated series; rates here are < 4 so 60 terms is
                        // far beyond the tail.
                        (0..60)
                            .map(|k| k as f64 * family.density_at(eta, k as f64).unwrap())
                            .sum()
                    }
                    ExpFamilyKind::GaussianMean { sigma } => {
                        // Quadrature of T(y) f(y) over a 10-sigma window.
                        let n = 20_001;
                        let lo = eta - 10.0 * sigma;
                        let hi = eta + 10.0 * sigma;
                        let step = (hi - lo) / (n - 1) as f64;
                        let vals: Vec<f64> = (0..n)
                            .map(|i| {
                                let y = lo + step * i as f64;
                                family.suff_stat(y) * family.density_at(eta, y).unwrap()
                            })
                            .collect();
                        trapezoid(&vals, step)
                    }
                };
                assert_abs_diff_eq!(fd, mean_t, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn expfam_curvature_envelope_holds_on_samples() {
        let features = simple_features(1, 1, 1, |_, _| vec![1.0]);
        let class = ExpFamilyClass::new(features, ExpFamilyKind::Bernoulli, 1.5).unwrap();
        let (lo, hi) = class.lambda_bounds();
        for i in 0..=100 {
            let eta = -1.5 + 3.0 * i as f64 / 100.0;
            let h = class.family.hess(eta);
            assert!(h >= lo - 1e-12 && h <= hi + 1e-12);
        }
    }

    #[test]
    fn expfam_linearization_constant_is_valid() {
        let features = simple_features(1, 1, 1, |_, _| vec![1.0]);
        let class = ExpFamilyClass::new(features, ExpFamilyKind::Bernoulli, 2.0).unwrap();
        let c = class.hellinger_linearization_c();
        assert!(c > 0.0 && c <= 1.0);
        let (lambda_lo, _) = class.lambda_bounds();
        let m = lambda_lo * class.coeff_bound * class.coeff_bound / 2.0;
        for i in 1..=50 {
            let x = m * i as f64 / 50.0;
            assert!(c * x <= 1.0 - (-x).exp() + 1e-12);
        }
    }

    #[test]
    fn table_shape_checks() {
        let d1 = ber(0.2);
        assert!(DensityTable::new(2, 2, vec![d1.clone(); 3]).is_err());
        let mixed = vec![
            d1.clone(),
            Density::Gaussian(GaussianDist::new(0.0, 1.0).unwrap()),
        ];
        assert!(DensityTable::new(1, 2, mixed).is_err());
    }

    #[test]
    fn finite_class_from_bernoulli_means() {
        let means = vec![
            vec![vec![0.2, 0.8], vec![0.5, 0.5]],
            vec![vec![0.3, 0.6], vec![0.1, 0.9]],
        ];
        let class = FiniteDensityClass::from_bernoulli_means(&means).unwrap();
        assert_eq!(class.n_members(), 2);
        assert_eq!(class.n_contexts(), 2);
        assert_eq!(class.n_actions(), 2);
        assert_abs_diff_eq!(
            class.member(1).density_at(1, 1, 1.0).unwrap(),
            0.9,
            epsilon = 1e-15
        );
    }
}
