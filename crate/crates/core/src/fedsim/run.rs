use std::time::Instant;

use nalgebra::DVector;

use super::{AlgorithmConfig, FedError, FederatedState, Result, RoundMetrics, Simulator};
use crate::objective::OracleSolution;

/// Metrics plus the iterate after every round (index 0 is w₀ = 0).
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub metrics: Vec<RoundMetrics>,
    pub iterates: Vec<DVector<f64>>,
    pub null_steps: usize,
}

impl Simulator<'_> {
    fn metrics_at(&self, w: &DVector<f64>, round: usize, loss_star: f64) -> Result<RoundMetrics> {
        let loss = self.global_loss(w)?;
        Ok(RoundMetrics {
            round,
            loss,
            gap: loss - loss_star,
            grad_norm: self.global_gradient(w)?.norm(),
            uplink_floats: 0,
            downlink_floats: 0,
            wall_seconds: 0.0,
        })
    }

    pub fn trajectory(&self, cfg: &AlgorithmConfig, oracle: &OracleSolution) -> Result<Trajectory> {
        cfg.validate()?;
        if let Some(gap_tol) = cfg.gap_tolerance {
            if oracle.tolerance * 100.0 > gap_tol {
                return Err(FedError::OracleTooLoose {
                    oracle_tol: oracle.tolerance,
                    gap_tol,
                });
            }
        }
        if oracle.w_star.len() != self.dim() {
            return Err(FedError::DimensionMismatch {
                expected: self.dim(),
                got: oracle.w_star.len(),
            });
        }

        let mut state = FederatedState::zeros(self.dim());
        let mut metrics = vec![self.metrics_at(&state.w, 0, oracle.loss_star)?];
        let mut iterates = vec![state.w.clone()];
        let mut null_steps = 0;

        for round in 1..=cfg.max_rounds {
            if cfg
                .gap_tolerance
                .is_some_and(|tol| metrics.last().is_some_and(|m| m.gap <= tol))
            {
                break;
            }
            let started = Instant::now();
            let outcome = self.step(&state, cfg).map_err(|e| FedError::AtRound {
                round,
                source: Box::new(e),
            })?;
            let wall_seconds = started.elapsed().as_secs_f64();
            state = outcome.state;
            null_steps += usize::from(outcome.null_step);

            let mut m = self
                .metrics_at(&state.w, round, oracle.loss_star)
                .map_err(|e| FedError::AtRound {
                    round,
                    source: Box::new(e),
                })?;
            m.uplink_floats = outcome.traffic.uplink;
            m.downlink_floats = outcome.traffic.downlink;
            m.wall_seconds = wall_seconds;
            metrics.push(m);
            iterates.push(state.w.clone());
        }
        Ok(Trajectory {
            metrics,
            iterates,
            null_steps,
        })
    }
}

/// Run `cfg` from w₀ = 0 until the gap reaches `cfg.gap_tolerance` or
/// `cfg.max_rounds` steps have been taken.
pub fn run_experiment(
    sim: &Simulator<'_>,
    cfg: &AlgorithmConfig,
    oracle: &OracleSolution,
) -> Result<Vec<RoundMetrics>> {
    sim.trajectory(cfg, oracle).map(|t| t.metrics)
}
