use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{
    momentum_coefficient, Algorithm, AlgorithmConfig, FedError, FederatedState, Momentum, Reseed,
    Result, StepRule, StepSize, UpdatePoint,
};
use crate::data::{concat_clients, ClientDataset};
use crate::objective::{solve_spd, symmetrize, Objective, SmoothnessConstants};
use crate::seeds;
use crate::sketch::{SketchKind, SketchOperator};

const MAX_HALVINGS: usize = 30;

/// Scalars actually transmitted in one round, summed over clients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Traffic {
    pub uplink: u64,
    pub downlink: u64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: FederatedState,
    pub traffic: Traffic,
    /// The line search found no acceptable step; the iterate was kept and
    /// momentum reset.
    pub null_step: bool,
}

/// FLeNS client work at lookahead `v`: `(S·∇²L_j(v)·Sᵀ, S·g_j(v))`.
///
/// The loss Hessian enters through its square root `A_j`, so the k×k block is
/// `(S·A_jᵀ)(S·A_jᵀ)ᵀ`. The gradient carries the regularizer; the Hessian
/// block does not (the server adds it exactly).
pub fn client_flens(
    client: &ClientDataset,
    objective: &Objective,
    v: &DVector<f64>,
    sketch: &SketchOperator,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if sketch.d() != v.len() {
        return Err(FedError::DimensionMismatch {
            expected: v.len(),
            got: sketch.d(),
        });
    }
    let a = objective.hessian_sqrt(v, &client.data)?.0;
    let b = sketch.apply_left(&a.transpose())?;
    let mut hs = &b * b.transpose();
    symmetrize(&mut hs);
    let gs = sketch.apply_vec(&objective.gradient(v, &client.data)?)?;
    Ok((hs, gs))
}

/// Weighted sums of client blocks, accumulated in slice order.
pub fn server_aggregate(
    parts: &[(DMatrix<f64>, DVector<f64>)],
    weights: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if parts.is_empty() || parts.len() != weights.len() {
        return Err(FedError::WeightMismatch(format!(
            "{} parts but {} weights",
            parts.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(FedError::WeightMismatch(format!("weights sum to {total}")));
    }
    let (h0, g0) = &parts[0];
    let mut h = DMatrix::zeros(h0.nrows(), h0.ncols());
    let mut g = DVector::zeros(g0.len());
    for ((hj, gj), &wj) in parts.iter().zip(weights) {
        if hj.shape() != h.shape() || gj.len() != g.len() {
            return Err(FedError::DimensionMismatch {
                expected: g.len(),
                got: gj.len(),
            });
        }
        h += hj * wj;
        g += gj * wj;
    }
    Ok((h, g))
}

/// The server's view of a federation: client shards, objective, smoothness
/// constants and the master seed from which every sketch seed is derived.
pub struct Simulator<'a> {
    objective: Objective,
    clients: &'a [ClientDataset],
    dim: usize,
    constants: SmoothnessConstants,
    master_seed: u64,
}

impl<'a> Simulator<'a> {
    /// Smoothness constants are estimated on the union of the client shards.
    pub fn new(
        objective: Objective,
        clients: &'a [ClientDataset],
        master_seed: u64,
    ) -> Result<Self> {
        let union = concat_clients(clients)?;
        let constants = objective.estimate_constants(&union)?;
        Self::with_constants(objective, clients, constants, master_seed)
    }

    pub fn with_constants(
        objective: Objective,
        clients: &'a [ClientDataset],
        constants: SmoothnessConstants,
        master_seed: u64,
    ) -> Result<Self> {
        let dim = clients
            .first()
            .map(|c| c.data.dim())
            .ok_or_else(|| FedError::InvalidConfig("no clients".into()))?;
        for (i, c) in clients.iter().enumerate() {
            if c.data.dim() != dim {
                return Err(FedError::DimensionMismatch {
                    expected: dim,
                    got: c.data.dim(),
                });
            }
            if c.client_id != i {
                return Err(FedError::InvalidConfig(
                    "clients must be ordered by client_id".into(),
                ));
            }
        }
        let total: f64 = clients.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(FedError::WeightMismatch(format!(
                "client weights sum to {total}"
            )));
        }
        Ok(Self {
            objective,
            clients,
            dim,
            constants,
            master_seed,
        })
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn clients(&self) -> &[ClientDataset] {
        self.clients
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constants(&self) -> SmoothnessConstants {
        self.constants
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    fn weights(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.weight).collect()
    }

    fn client_count(&self) -> u64 {
        self.clients.len() as u64
    }

    /// Σ_j (n_j/N)·L_j(w)
    pub fn global_loss(&self, w: &DVector<f64>) -> Result<f64> {
        let mut total = 0.0;
        for c in self.clients {
            total += c.weight * self.objective.loss(w, &c.data)?;
        }
        Ok(total)
    }

    pub fn global_gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(self.dim);
        for c in self.clients {
            g += self.objective.gradient(w, &c.data)? * c.weight;
        }
        Ok(g)
    }

    /// Seed of the sketch shared by all clients in `round`.
    pub fn round_seed(&self, round: usize, reseed: Reseed) -> u64 {
        match reseed {
            Reseed::EveryRound => seeds::derive(self.master_seed, round as u64),
            Reseed::Once => seeds::derive(self.master_seed, 0),
        }
    }

    fn step_size(&self, cfg: &AlgorithmConfig) -> f64 {
        match cfg.step_size {
            StepSize::Fixed(mu) => mu,
            StepSize::InverseSmoothness => 1.0 / self.constants.l1,
        }
    }

    /// Take `base − μ·direction`, backtracking under the Armijo rule. `None`
    /// when no trial step keeps the loss at or below `loss(w)`.
    fn advance(
        &self,
        cfg: &AlgorithmConfig,
        w: &DVector<f64>,
        base: &DVector<f64>,
        direction: &DVector<f64>,
    ) -> Result<Option<DVector<f64>>> {
        let mu = self.step_size(cfg);
        if cfg.step_rule == StepRule::Fixed {
            return Ok(Some(base - direction * mu));
        }
        let reference = self.global_loss(w)?;
        if !reference.is_finite() {
            return Err(FedError::LineSearchFailed);
        }
        let mut t = mu;
        for _ in 0..=MAX_HALVINGS {
            let cand = base - direction * t;
            if self.global_loss(&cand)? <= reference {
                return Ok(Some(cand));
            }
            t *= 0.5;
        }
        Ok(None)
    }

    fn finish(
        &self,
        state: &FederatedState,
        next: Option<DVector<f64>>,
        beta: f64,
        traffic: Traffic,
    ) -> Result<StepOutcome> {
        let null_step = next.is_none();
        let w = next.unwrap_or_else(|| state.w.clone());
        if w.iter().any(|x| !x.is_finite()) {
            return Err(FedError::NonFiniteIterate);
        }
        // a rejected step restarts momentum: w_prev = w
        let w_prev = if null_step {
            w.clone()
        } else {
            state.w.clone()
        };
        Ok(StepOutcome {
            state: FederatedState {
                w,
                w_prev,
                round: state.round + 1,
                beta,
            },
            traffic,
            null_step,
        })
    }

    /// Sketch operator FLeNS uses in `round`.
    pub fn flens_sketch(&self, cfg: &AlgorithmConfig, round: usize) -> Result<SketchOperator> {
        Ok(SketchOperator::new(
            cfg.sketch.kind,
            cfg.sketch.k,
            self.dim,
            self.round_seed(round, cfg.sketch.reseed),
        )?)
    }

    /// Sketched server system at lookahead `v`: `K = Σ (n_j/N)·S H_j Sᵀ + reg·S Sᵀ`
    /// and `g_s = Σ (n_j/N)·S g_j`.
    pub fn flens_system(
        &self,
        v: &DVector<f64>,
        sketch: &SketchOperator,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let parts = self
            .clients
            .par_iter()
            .map(|c| client_flens(c, &self.objective, v, sketch))
            .collect::<Result<Vec<_>>>()?;
        let (mut k, gs) = server_aggregate(&parts, &self.weights())?;
        k += sketch.gram() * self.objective.reg();
        Ok((k, gs))
    }

    pub fn flens_step(&self, state: &FederatedState, cfg: &AlgorithmConfig) -> Result<StepOutcome> {
        let beta = momentum_coefficient(cfg.momentum, self.constants, state.round)?;
        let v = state.lookahead(beta);
        let sketch = self.flens_sketch(cfg, state.round)?;
        let (k, gs) = self.flens_system(&v, &sketch)?;
        let delta_s = solve_spd(k, &gs).ok_or(FedError::SingularSketchedSystem)?;
        let delta = sketch.apply_transpose(&delta_s)?;
        let base = match cfg.update_point {
            UpdatePoint::FromV => &v,
            UpdatePoint::FromW => &state.w,
        };
        let next = self.advance(cfg, &state.w, base, &delta)?;
        let k = sketch.k() as u64;
        let m = self.client_count();
        let traffic = Traffic {
            uplink: m * (k * k + k),
            downlink: m * (self.dim as u64 + 1),
        };
        self.finish(state, next, beta, traffic)
    }

    /// Exact aggregated system `(Σ (n_j/N) H_j, Σ (n_j/N) g_j)` with regularized local Hessians.
    pub fn fednewton_system(&self, w: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let parts = self
            .clients
            .par_iter()
            .map(|c| {
                Ok((
                    self.objective.hessian(w, &c.data)?,
                    self.objective.gradient(w, &c.data)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        server_aggregate(&parts, &self.weights())
    }

    pub fn fednewton_step(
        &self,
        state: &FederatedState,
        cfg: &AlgorithmConfig,
    ) -> Result<StepOutcome> {
        let (h, g) = self.fednewton_system(&state.w)?;
        let delta = solve_spd(h, &g).ok_or(FedError::SingularHessian)?;
        let next = self.advance(cfg, &state.w, &state.w, &delta)?;
        let m = self.client_count();
        let d = self.dim as u64;
        self.finish(
            state,
            next,
            0.0,
            Traffic {
                uplink: m * (d * d + d),
                downlink: m * d,
            },
        )
    }

    /// Per-client sketch seeds for FedNS in `round`.
    fn fedns_sketch(
        &self,
        cfg: &AlgorithmConfig,
        round: usize,
        client: &ClientDataset,
    ) -> Result<SketchOperator> {
        let seed = seeds::derive(
            self.round_seed(round, cfg.sketch.reseed),
            client.client_id as u64 + 1,
        );
        let rows = client.data.rows();
        if cfg.sketch.kind == SketchKind::Identity && cfg.sketch.k != rows {
            return Err(FedError::InvalidConfig(format!(
                "identity sketch needs k = n_j, but client {} has {rows} rows and k = {}",
                client.client_id, cfg.sketch.k
            )));
        }
        Ok(SketchOperator::new(
            cfg.sketch.kind,
            cfg.sketch.k,
            rows,
            seed,
        )?)
    }

    /// `H̃ = Σ (n_j/N)·B_jᵀB_j + reg·I` with `B_j = S_j·A_j`, and the exact gradient.
    pub fn fedns_system(
        &self,
        w: &DVector<f64>,
        cfg: &AlgorithmConfig,
        round: usize,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let parts = self
            .clients
            .par_iter()
            .map(|c| {
                let a = self.objective.hessian_sqrt(w, &c.data)?.0;
                let b = self.fedns_sketch(cfg, round, c)?.apply_left(&a)?;
                let mut bb = b.tr_mul(&b);
                symmetrize(&mut bb);
                Ok((bb, self.objective.gradient(w, &c.data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut h, g) = server_aggregate(&parts, &self.weights())?;
        for i in 0..self.dim {
            h[(i, i)] += self.objective.reg();
        }
        Ok((h, g))
    }

    pub fn fedns_step(&self, state: &FederatedState, cfg: &AlgorithmConfig) -> Result<StepOutcome> {
        let (h, g) = self.fedns_system(&state.w, cfg, state.round)?;
        let delta = solve_spd(h, &g).ok_or(FedError::SingularHessian)?;
        let next = self.advance(cfg, &state.w, &state.w, &delta)?;
        let m = self.client_count();
        let (d, k) = (self.dim as u64, cfg.sketch.k as u64);
        self.finish(
            state,
            next,
            0.0,
            Traffic {
                uplink: m * (k * d + d),
                downlink: m * d,
            },
        )
    }

    pub fn fedgd_step(&self, state: &FederatedState, cfg: &AlgorithmConfig) -> Result<StepOutcome> {
        let parts = self
            .clients
            .par_iter()
            .map(|c| self.objective.gradient(&state.w, &c.data))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut g = DVector::zeros(self.dim);
        for (gj, c) in parts.iter().zip(self.clients) {
            g += gj * c.weight;
        }
        let next = self.advance(cfg, &state.w, &state.w, &g)?;
        let m = self.client_count();
        let d = self.dim as u64;
        self.finish(
            state,
            next,
            0.0,
            Traffic {
                uplink: m * d,
                downlink: m * d,
            },
        )
    }

    pub fn step(&self, state: &FederatedState, cfg: &AlgorithmConfig) -> Result<StepOutcome> {
        match cfg.algorithm {
            Algorithm::Flens => self.flens_step(state, cfg),
            Algorithm::FedNewton => self.fednewton_step(state, cfg),
            Algorithm::FedNs => self.fedns_step(state, cfg),
            Algorithm::FedGd => self.fedgd_step(state, cfg),
        }
    }

    /// Momentum in force for `cfg` (for diagnostics).
    pub fn momentum(&self, cfg: &AlgorithmConfig) -> Result<f64> {
        match cfg.algorithm {
            Algorithm::Flens => momentum_coefficient(cfg.momentum, self.constants, 0),
            _ => momentum_coefficient(Momentum::Off, self.constants, 0),
        }
    }
}
