//! Federated second-order optimization laboratory.
//!
//! A deterministic single-process simulator for federated Newton-type
//! methods on regularized logistic and ridge objectives:
//!
//! * [`fedsim`]: FLeNS (Nesterov lookahead + shared k×k Hessian sketch),
//!   FedNewton, FedNS-style partial sketching and a FedGD baseline, with exact
//!   per-round float accounting;
//! * [`objective`]: losses, derivatives, Hessian square roots and the
//!   centralized Newton oracle that defines the optimality gap;
//! * [`sketch`]: SRHT, Gaussian, CountSketch and identity operators;
//! * [`data`]: LIBSVM ingestion, synthetic data and client partitioning;
//! * [`cli`]: experiment specs, CSV/JSON output and the `flens` commands.

pub mod cli;
pub mod data;
pub mod fedsim;
pub mod objective;
pub mod seeds;
pub mod sketch;

pub use data::{ClientDataset, Dataset, PartitionKind, PartitionScheme};
pub use fedsim::{Algorithm, AlgorithmConfig, FederatedState, RoundMetrics, Simulator};
pub use objective::{Objective, ObjectiveKind, OracleSolution, RegConvention};
pub use sketch::{SketchKind, SketchOperator};
