use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FedError;
use crate::sketch::SketchKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    /// Nesterov lookahead + shared-seed k×k sketched Newton step.
    Flens,
    /// Exact Newton from aggregated full local Hessians.
    FedNewton,
    /// Per-client sketched Hessian square roots (k×M uplink).
    FedNs,
    /// One global gradient step per round.
    FedGd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Flens,
        Algorithm::FedNewton,
        Algorithm::FedNs,
        Algorithm::FedGd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Flens => "flens",
            Algorithm::FedNewton => "fednewton",
            Algorithm::FedNs => "fedns",
            Algorithm::FedGd => "fedgd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                format!("unknown algorithm `{s}` (expected flens, fednewton, fedns or fedgd)")
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepSize {
    Fixed(f64),
    /// μ = 1/L1 from the smoothness estimate.
    InverseSmoothness,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepRule {
    Fixed,
    /// Halve μ (at most 30 times) until the loss does not increase.
    Armijo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Momentum {
    /// β = (L1 − γ)/(L1 + γ)
    Auto,
    Constant(f64),
    Off,
}

/// Where the sketched Newton step is taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdatePoint {
    /// w⁺ = v − μδ
    FromV,
    /// w⁺ = w − μδ
    FromW,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reseed {
    EveryRound,
    /// One sketch for the whole run.
    Once,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchConfig {
    pub kind: SketchKind,
    pub k: usize,
    pub reseed: Reseed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub algorithm: Algorithm,
    pub step_size: StepSize,
    pub step_rule: StepRule,
    pub momentum: Momentum,
    pub sketch: SketchConfig,
    pub update_point: UpdatePoint,
    pub max_rounds: usize,
    /// Stop once the optimality gap drops to this value; `None` runs all rounds.
    pub gap_tolerance: Option<f64>,
}

impl AlgorithmConfig {
    /// Defaults: μ = 1 (1/L1 for FedGD), fixed step, Auto momentum for FLeNS,
    /// SRHT with k = `dim` reseeded every round, steps from v, 30 rounds.
    pub fn new(algorithm: Algorithm, dim: usize) -> Self {
        Self {
            algorithm,
            step_size: match algorithm {
                Algorithm::FedGd => StepSize::InverseSmoothness,
                _ => StepSize::Fixed(1.0),
            },
            step_rule: StepRule::Fixed,
            momentum: match algorithm {
                Algorithm::Flens => Momentum::Auto,
                _ => Momentum::Off,
            },
            sketch: SketchConfig {
                kind: SketchKind::Srht,
                k: dim,
                reseed: Reseed::EveryRound,
            },
            update_point: UpdatePoint::FromV,
            max_rounds: 30,
            gap_tolerance: None,
        }
    }

    pub fn with_sketch(mut self, kind: SketchKind, k: usize) -> Self {
        self.sketch.kind = kind;
        self.sketch.k = k;
        self
    }

    pub fn with_momentum(mut self, momentum: Momentum) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_step(mut self, step_size: StepSize, step_rule: StepRule) -> Self {
        self.step_size = step_size;
        self.step_rule = step_rule;
        self
    }

    pub fn with_rounds(mut self, max_rounds: usize) -> Self {
        self.max_rounds = max_rounds;
        self
    }

    pub fn validate(&self) -> Result<(), FedError> {
        let bad = |msg: String| Err(FedError::InvalidConfig(msg));
        if let StepSize::Fixed(mu) = self.step_size {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad(format!("step size must be positive, got {mu}"));
            }
        }
        if let Momentum::Constant(beta) = self.momentum {
            if !(0.0..1.0).contains(&beta) {
                return bad(format!("momentum must lie in [0, 1), got {beta}"));
            }
        }
        if self.sketch.k == 0 {
            return bad("sketch size must be positive".into());
        }
        if let Some(tol) = self.gap_tolerance {
            if !(tol >= 0.0 && tol.is_finite()) {
                return bad(format!("gap tolerance must be non-negative, got {tol}"));
            }
        }
        Ok(())
    }
}
