//! Causal-effect estimation for treatments that are entangled through the
//! evolution of a network.
//!
//! A unit's treatment is a function of how the network changed between two
//! observation times (`G⁻ → G⁺`), e.g. "made at least one new connection".
//! Because one new edge treats two units at once, treatments are not
//! independent across units and the classical propensity score, fit unit by
//! unit, is misspecified. This crate provides:
//!
//! * [`graph`] and [`netmodel`]: dense binary networks and edge-probability
//!   models for the evolution, with sampling and fitting.
//! * [`treatment`]: treatment definitions `Zᵢ = fᵢ(G⁻, G⁺)` and entanglement
//!   constraint checks.
//! * [`propensity`]: entanglement-aware propensity tables (Monte-Carlo,
//!   exact Poisson-binomial, brute-force enumeration) and the classical
//!   Poisson/logistic baselines built on [`glm`].
//! * [`subclass`]: quantile and k-means subclassification with
//!   subclassification effect estimators.
//! * [`similarity`]: exact and gradient-based similarity between propensity
//!   models.
//! * [`experiments`]: the worked five-unit example and the replicated
//!   simulation studies.
//!
//! Data-parallel loops go through [`exec`]; with the default `parallel`
//! feature they run on rayon, otherwise sequentially. Results are identical
//! either way.

pub mod error;
pub mod exec;
pub mod experiments;
pub mod glm;
pub mod graph;
pub mod kv;
pub mod matrix;
mod linalg;
pub mod netmodel;
pub mod propensity;
pub mod rng;
pub mod similarity;
pub mod subclass;
pub mod treatment;

pub use error::{Error, Result};
pub use graph::Graph;
pub use matrix::Matrix;

/// Logistic function `eᵘ / (1 + eᵘ)`, evaluated without overflow.
#[inline]
pub fn expit(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::expit;

    #[test]
    fn expit_is_stable_at_extremes() {
        assert_eq!(expit(0.0), 0.5);
        assert_eq!(expit(800.0), 1.0);
        assert_eq!(expit(-800.0), 0.0);
        assert!((expit(1.0) - std::f64::consts::E / (1.0 + std::f64::consts::E)).abs() < 1e-15);
        assert!((expit(-3.0) + expit(3.0) - 1.0).abs() < 1e-15);
    }
}
