//! Laboratory for constrained contextual online decision-making.
//!
//! The crate implements the GED-UCB policy end to end: metric-like
//! divergences over three distribution carriers, offline density-estimation
//! oracles with explicit error budgets, generalized-eluder-dimension
//! machinery with certified bounds, the optimism-plus-width policy engine
//! with its counterfactual inner loop, reductions from four constrained
//! decision problems, and a deterministic experiment harness.
//!
//! Layering (each module depends only on those above it):
//! [`divergence`] -> [`models`] -> [`oracle`] -> [`eluder`] -> [`policy`]
//! -> [`envs`] -> [`harness`].

pub mod divergence;
pub mod eluder;
pub mod envs;
pub mod error;
pub mod harness;
pub mod models;
pub mod oracle;
pub mod par;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};

/// Two sides of one inequality, as computed by a runtime lemma check.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl LemmaCheck {
    /// Whether the inequality `lhs <= rhs` holds, with no tolerance: the
    /// checked lemmas are deterministic statements, not estimates.
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }

    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}
