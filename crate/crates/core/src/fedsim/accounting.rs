use serde::{Deserialize, Serialize};

use super::Algorithm;

/// Scalars moved per client in one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloatCounts {
    pub uplink_per_client: u64,
    pub downlink_per_client: u64,
}

impl FloatCounts {
    pub fn round_totals(&self, clients: usize) -> (u64, u64) {
        (
            self.uplink_per_client * clients as u64,
            self.downlink_per_client * clients as u64,
        )
    }
}

/// Closed-form per-client traffic of one round.
///
/// FLeNS uploads a k×k sketched Hessian and a k-vector and receives the model
/// plus the round's sketch seed. FedNS uploads a k×M sketched square root and
/// the M-gradient. FedNewton uploads the full M×M Hessian and gradient.
pub fn account_floats(algorithm: Algorithm, dim: usize, k: usize, _clients: usize) -> FloatCounts {
    let (m, k) = (dim as u64, k as u64);
    let (up, down) = match algorithm {
        Algorithm::Flens => (k * k + k, m + 1),
        Algorithm::FedNewton => (m * m + m, m),
        Algorithm::FedNs => (k * m + m, m),
        Algorithm::FedGd => (m, m),
    };
    FloatCounts {
        uplink_per_client: up,
        downlink_per_client: down,
    }
}
