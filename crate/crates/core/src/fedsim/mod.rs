//! Federated round engine.
//!
//! All four algorithms share the same driver: a [`Simulator`] owns the client
//! shards and the objective, each `*_step` consumes one [`FederatedState`] and
//! produces the next, and [`run_experiment`] records one [`RoundMetrics`] per
//! round (round 0 is the starting point w = 0).
//!
//! Client work inside a round may run in parallel, but every server-side sum
//! walks the clients in ascending `client_id` order so results are
//! bit-reproducible.

mod accounting;
mod config;
mod engine;
mod run;

pub use accounting::{account_floats, FloatCounts};
pub use config::{
    Algorithm, AlgorithmConfig, Momentum, Reseed, SketchConfig, StepRule, StepSize, UpdatePoint,
};
pub use engine::{client_flens, server_aggregate, Simulator, StepOutcome, Traffic};
pub use run::{run_experiment, Trajectory};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::objective::{ObjectiveError, SmoothnessConstants};
use crate::sketch::SketchError;

#[derive(Debug, Error)]
pub enum FedError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("aggregation weights invalid: {0}")]
    WeightMismatch(String),
    #[error("smoothness constants invalid: L1 = {l1}, gamma = {gamma}")]
    InvalidConstants { l1: f64, gamma: f64 },
    #[error("sketched system is not positive definite")]
    SingularSketchedSystem,
    #[error("aggregated Hessian is not positive definite")]
    SingularHessian,
    #[error("iterate has non-finite entries")]
    NonFiniteIterate,
    #[error("line search could not evaluate a finite loss")]
    LineSearchFailed,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("oracle tolerance {oracle_tol:e} is not 100x tighter than gap tolerance {gap_tol:e}")]
    OracleTooLoose { oracle_tol: f64, gap_tol: f64 },
    #[error("round {round}: {source}")]
    AtRound { round: usize, source: Box<FedError> },
}

pub type Result<T, E = FedError> = std::result::Result<T, E>;

/// Global iterate plus the bookkeeping Nesterov's lookahead needs.
#[derive(Clone, Debug, PartialEq)]
pub struct FederatedState {
    pub w: DVector<f64>,
    pub w_prev: DVector<f64>,
    pub round: usize,
    pub beta: f64,
}

impl FederatedState {
    /// w = w_prev = 0, so the first lookahead point is w itself.
    pub fn zeros(dim: usize) -> Self {
        Self {
            w: DVector::zeros(dim),
            w_prev: DVector::zeros(dim),
            round: 0,
            beta: 0.0,
        }
    }

    /// v = w + β(w − w_prev)
    pub fn lookahead(&self, beta: f64) -> DVector<f64> {
        &self.w + (&self.w - &self.w_prev) * beta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub loss: f64,
    pub gap: f64,
    pub grad_norm: f64,
    pub uplink_floats: u64,
    pub downlink_floats: u64,
    pub wall_seconds: f64,
}

/// β_t for the given policy. Auto gives (L1 − γ)/(L1 + γ), constant in t.
pub fn momentum_coefficient(
    policy: Momentum,
    constants: SmoothnessConstants,
    _round: usize,
) -> Result<f64> {
    let SmoothnessConstants { l1, gamma } = constants;
    if !(gamma > 0.0 && l1 >= gamma && l1.is_finite()) {
        return Err(FedError::InvalidConstants { l1, gamma });
    }
    Ok(match policy {
        Momentum::Auto => (l1 - gamma) / (l1 + gamma),
        Momentum::Constant(beta) => beta,
        Momentum::Off => 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(l1: f64, gamma: f64) -> SmoothnessConstants {
        SmoothnessConstants { l1, gamma }
    }

    #[test]
    fn momentum_values() {
        assert_eq!(
            momentum_coefficient(Momentum::Auto, c(2.0, 2.0), 0).unwrap(),
            0.0
        );
        assert_eq!(
            momentum_coefficient(Momentum::Auto, c(3.0, 1.0), 5).unwrap(),
            0.5
        );
        for t in [0, 1, 100] {
            assert_eq!(
                momentum_coefficient(Momentum::Off, c(3.0, 1.0), t).unwrap(),
                0.0
            );
            assert_eq!(
                momentum_coefficient(Momentum::Constant(0.3), c(3.0, 1.0), t).unwrap(),
                0.3
            );
        }
    }

    #[test]
    fn momentum_rejects_bad_constants() {
        assert!(matches!(
            momentum_coefficient(Momentum::Auto, c(0.5, 1.0), 0),
            Err(FedError::InvalidConstants { .. })
        ));
        assert!(momentum_coefficient(Momentum::Off, c(1.0, 0.0), 0).is_err());
    }

    #[test]
    fn initial_lookahead_is_w() {
        let s = FederatedState::zeros(3);
        assert_eq!(s.lookahead(0.9), s.w);
    }
}
