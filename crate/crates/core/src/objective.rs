//! Regularized empirical-risk objectives and the centralized Newton oracle.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("regularization strength must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("power iteration produced non-finite values")]
    PowerIterationDivergence,
    #[error("Hessian is not positive definite even after jitter")]
    SingularHessian,
    #[error("Newton oracle stopped after {} iterations with gradient norm {:.3e}", .best.iterations, .best.grad_norm)]
    DidNotConverge { best: Box<OracleSolution> },
}

pub type Result<T, E = ObjectiveError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Logistic,
    RidgeLs,
}

/// Which scaling of the squared-norm penalty is in force.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegConvention {
    /// λ/2·‖w‖²
    Half,
    /// λ·‖w‖²
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub lambda: f64,
    pub reg_convention: RegConvention,
}

/// Matrix `A` (n × M) with `AᵀA` equal to the unregularized loss Hessian.
#[derive(Clone, Debug)]
pub struct HessianSqrt(pub DMatrix<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    /// Upper bound on the Hessian spectrum.
    pub l1: f64,
    /// Strong-convexity modulus (the effective regularization coefficient).
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub w_star: Vec<f64>,
    pub loss_star: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub tolerance: f64,
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(-z)) without overflow.
fn logistic_loss(z: f64) -> f64 {
    (-z.abs()).exp().ln_1p() + (-z).max(0.0)
}

impl Objective {
    pub fn new(kind: ObjectiveKind, lambda: f64, reg_convention: RegConvention) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(ObjectiveError::InvalidLambda(lambda));
        }
        Ok(Self {
            kind,
            lambda,
            reg_convention,
        })
    }

    pub fn logistic(lambda: f64) -> Result<Self> {
        Self::new(ObjectiveKind::Logistic, lambda, RegConvention::Half)
    }

    pub fn ridge(lambda: f64) -> Result<Self> {
        Self::new(ObjectiveKind::RidgeLs, lambda, RegConvention::Half)
    }

    /// Coefficient of the identity in the regularizer's Hessian (λ or 2λ).
    pub fn reg(&self) -> f64 {
        match self.reg_convention {
            RegConvention::Half => self.lambda,
            RegConvention::Full => 2.0 * self.lambda,
        }
    }

    fn check(&self, w: &DVector<f64>, data: &Dataset) -> Result<()> {
        if w.len() != data.dim() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: data.dim(),
                got: w.len(),
            });
        }
        Ok(())
    }

    /// y_i · x_iᵀw for logistic, x_iᵀw for ridge.
    fn margins(&self, w: &DVector<f64>, data: &Dataset) -> DVector<f64> {
        let xw = data.features() * w;
        match self.kind {
            ObjectiveKind::Logistic => xw.component_mul(data.labels()),
            ObjectiveKind::RidgeLs => xw,
        }
    }

    pub fn loss(&self, w: &DVector<f64>, data: &Dataset) -> Result<f64> {
        self.check(w, data)?;
        let n = data.rows() as f64;
        let m = self.margins(w, data);
        let data_term = match self.kind {
            ObjectiveKind::Logistic => m.iter().map(|&z| logistic_loss(z)).sum::<f64>() / n,
            ObjectiveKind::RidgeLs => (m - data.labels()).norm_squared() / (2.0 * n),
        };
        Ok(data_term + 0.5 * self.reg() * w.norm_squared())
    }

    pub fn gradient(&self, w: &DVector<f64>, data: &Dataset) -> Result<DVector<f64>> {
        self.check(w, data)?;
        let n = data.rows() as f64;
        let m = self.margins(w, data);
        // residual r such that the data gradient is Xᵀr / n
        let r = match self.kind {
            ObjectiveKind::Logistic => DVector::from_iterator(
                m.len(),
                m.iter()
                    .zip(data.labels().iter())
                    .map(|(&z, &y)| -y * sigmoid(-z)),
            ),
            ObjectiveKind::RidgeLs => m - data.labels(),
        };
        Ok(data.features().tr_mul(&r) / n + w * self.reg())
    }

    /// Per-sample curvature weights d_i with loss Hessian = Xᵀ diag(d) X.
    fn curvature_weights(&self, w: &DVector<f64>, data: &Dataset) -> DVector<f64> {
        let n = data.rows() as f64;
        match self.kind {
            ObjectiveKind::Logistic => self.margins(w, data).map(|z| sigmoid(z) * sigmoid(-z) / n),
            ObjectiveKind::RidgeLs => DVector::from_element(data.rows(), 1.0 / n),
        }
    }

    /// Hessian of the data term only.
    pub fn loss_hessian(&self, w: &DVector<f64>, data: &Dataset) -> Result<DMatrix<f64>> {
        let a = self.hessian_sqrt(w, data)?.0;
        let mut h = a.tr_mul(&a);
        symmetrize(&mut h);
        Ok(h)
    }

    pub fn hessian(&self, w: &DVector<f64>, data: &Dataset) -> Result<DMatrix<f64>> {
        let mut h = self.loss_hessian(w, data)?;
        for i in 0..h.nrows() {
            h[(i, i)] += self.reg();
        }
        Ok(h)
    }

    pub fn hessian_sqrt(&self, w: &DVector<f64>, data: &Dataset) -> Result<HessianSqrt> {
        self.check(w, data)?;
        let scale = self.curvature_weights(w, data).map(f64::sqrt);
        let mut a = data.features().clone();
        for (i, mut row) in a.row_iter_mut().enumerate() {
            row *= scale[i];
        }
        Ok(HessianSqrt(a))
    }

    /// (L1, γ): γ is the regularization coefficient and
    /// L1 = c·λ_max(XᵀX)/n + γ with c = 1/4 (logistic) or 1 (ridge).
    pub fn estimate_constants(&self, data: &Dataset) -> Result<SmoothnessConstants> {
        let x = data.features();
        let gram = x.tr_mul(x) / data.rows() as f64;
        let top = power_iteration(&gram, 1e-6, 500, 0x5eed)?;
        let curvature_bound = match self.kind {
            ObjectiveKind::Logistic => 0.25,
            ObjectiveKind::RidgeLs => 1.0,
        };
        Ok(SmoothnessConstants {
            l1: curvature_bound * top + self.reg(),
            gamma: self.reg(),
        })
    }

    /// Damped Newton from w = 0 with Armijo backtracking (c = 1e-4, factor 1/2)
    /// until ‖∇L‖₂ ≤ `tol`.
    pub fn newton_oracle(
        &self,
        data: &Dataset,
        tol: f64,
        max_iter: usize,
    ) -> Result<OracleSolution> {
        const ARMIJO_C: f64 = 1e-4;
        const MAX_HALVINGS: usize = 60;

        let mut w = DVector::zeros(data.dim());
        let mut f = self.loss(&w, data)?;
        let mut g = self.gradient(&w, data)?;
        let mut best = (w.clone(), f, g.norm());
        let mut iterations = 0;

        while g.norm() > tol && iterations < max_iter {
            let h = self.hessian(&w, data)?;
            let d = solve_spd(h, &g).ok_or(ObjectiveError::SingularHessian)?;
            let decrement = g.dot(&d);

            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let cand = &w - &d * t;
                let fc = self.loss(&cand, data)?;
                if fc <= f - ARMIJO_C * t * decrement {
                    accepted = Some((cand, fc));
                    break;
                }
                t *= 0.5;
            }
            let (next, fnext) = match accepted {
                Some(step) => step,
                // the decrease is below roundoff; a full step is safe in this regime
                None if decrement <= f64::EPSILON.sqrt() * f.abs().max(1.0) => {
                    let cand = &w - &d;
                    let fc = self.loss(&cand, data)?;
                    (cand, fc)
                }
                None => break,
            };
            w = next;
            f = fnext;
            g = self.gradient(&w, data)?;
            iterations += 1;
            if g.norm() < best.2 {
                best = (w.clone(), f, g.norm());
            }
        }

        let (w_star, loss_star, grad_norm) = best;
        let solution = OracleSolution {
            w_star: w_star.as_slice().to_vec(),
            loss_star,
            grad_norm,
            iterations,
            tolerance: tol,
        };
        if grad_norm <= tol {
            Ok(solution)
        } else {
            Err(ObjectiveError::DidNotConverge {
                best: Box::new(solution),
            })
        }
    }
}

impl OracleSolution {
    pub fn w(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w_star)
    }
}

/// Largest eigenvalue of a symmetric PSD matrix via power iteration with a
/// Rayleigh-quotient estimate.
pub fn power_iteration(a: &DMatrix<f64>, rel_tol: f64, max_iter: usize, seed: u64) -> Result<f64> {
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(n, |_, _| rng.random_range(0.5..1.5));
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let av = a * &v;
        let norm = av.norm();
        if !norm.is_finite() {
            return Err(ObjectiveError::PowerIterationDivergence);
        }
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = v.dot(&av);
        v = av / norm;
        if (next - estimate).abs() <= rel_tol * next.abs() {
            return Ok(next);
        }
        estimate = next;
    }
    Ok(estimate)
}

/// In-place (B + Bᵀ)/2.
pub fn symmetrize(b: &mut DMatrix<f64>) {
    let n = b.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (b[(i, j)] + b[(j, i)]);
            b[(i, j)] = avg;
            b[(j, i)] = avg;
        }
    }
}

/// Solve `K x = rhs` by Cholesky; on failure retry once with
/// 1e-12·trace(K)/dim added to the diagonal.
pub fn solve_spd(k: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let dim = k.nrows();
    let jitter = 1e-12 * k.trace() / dim as f64;
    let factor = Cholesky::<f64, Dyn>::new(k.clone()).or_else(|| {
        let mut k = k;
        for i in 0..dim {
            k[(i, i)] += jitter;
        }
        Cholesky::new(k)
    })?;
    let x = factor.solve(rhs);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_logistic;

    fn identity_data() -> Dataset {
        Dataset::new(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0])).unwrap()
    }

    #[test]
    fn logistic_at_zero_is_log_two() {
        let d = synth_logistic(30, 4, 2, 0.1).unwrap();
        let obj = Objective::logistic(0.3).unwrap();
        let f = obj.loss(&DVector::zeros(4), &d).unwrap();
        assert!((f - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn logistic_large_margin_is_finite() {
        let d = Dataset::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, -1.0),
        )
        .unwrap();
        let obj = Objective::logistic(1e-12).unwrap();
        let f = obj.loss(&DVector::from_element(1, 800.0), &d).unwrap();
        assert!(f.is_finite());
        assert!((f - 800.0).abs() < 1e-6);
        let g = obj.gradient(&DVector::from_element(1, 800.0), &d).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ridge_arithmetic() {
        let obj = Objective::ridge(1.0).unwrap();
        let f = obj.loss(&DVector::zeros(2), &identity_data()).unwrap();
        assert!((f - 0.5).abs() < 1e-15);
    }

    #[test]
    fn logistic_gradient_at_zero() {
        let d = synth_logistic(25, 3, 5, 0.0).unwrap();
        let obj = Objective::logistic(0.1).unwrap();
        let g = obj.gradient(&DVector::zeros(3), &d).unwrap();
        let expected = -d.features().tr_mul(d.labels()) / (2.0 * 25.0);
        assert!((g - expected).amax() < 1e-15);
    }

    #[test]
    fn ridge_closed_form_is_stationary() {
        let d = synth_logistic(40, 5, 8, 0.2).unwrap();
        for conv in [RegConvention::Half, RegConvention::Full] {
            let obj = Objective::new(ObjectiveKind::RidgeLs, 0.05, conv).unwrap();
            let n = 40.0;
            let mut lhs = d.features().tr_mul(d.features()) / n;
            for i in 0..5 {
                lhs[(i, i)] += obj.reg();
            }
            let rhs = d.features().tr_mul(d.labels()) / n;
            let w = lhs.lu().solve(&rhs).unwrap();
            assert!(obj.gradient(&w, &d).unwrap().norm() <= 1e-10);
        }
    }

    #[test]
    fn logistic_hessian_at_zero() {
        let d = synth_logistic(30, 4, 2, 0.1).unwrap();
        let obj = Objective::logistic(0.2).unwrap();
        let h = obj.hessian(&DVector::zeros(4), &d).unwrap();
        let mut expected = d.features().tr_mul(d.features()) / (4.0 * 30.0);
        for i in 0..4 {
            expected[(i, i)] += 0.2;
        }
        assert!((h - expected).amax() < 1e-14);
    }

    #[test]
    fn hessian_sqrt_at_zero_is_scaled_data() {
        let d = synth_logistic(16, 3, 4, 0.0).unwrap();
        let obj = Objective::logistic(0.2).unwrap();
        let a = obj.hessian_sqrt(&DVector::zeros(3), &d).unwrap().0;
        let expected = d.features() / (2.0 * 4.0);
        assert!((a - expected).amax() < 1e-15);
    }

    #[test]
    fn hessian_sqrt_small_instance_against_dense_weights() {
        // n = 3, M = 2: rows scaled by sqrt(σ(z)σ(-z)/n), compared with the
        // Hessian assembled sample by sample.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.3, 0.7, -1.1]);
        let y = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        let d = Dataset::new(x.clone(), y.clone()).unwrap();
        let w = DVector::from_vec(vec![0.4, -0.9]);
        let obj = Objective::logistic(0.01).unwrap();
        let a = obj.hessian_sqrt(&w, &d).unwrap().0;
        assert_eq!(a.shape(), (3, 2));
        let mut dense = DMatrix::zeros(2, 2);
        for i in 0..3 {
            let xi = x.row(i).transpose();
            let z = y[i] * xi.dot(&w);
            let p = 1.0 / (1.0 + (-z).exp());
            dense += &xi * xi.transpose() * (p * (1.0 - p) / 3.0);
        }
        assert!((a.tr_mul(&a) - &dense).amax() < 1e-15);
        let mut full = dense;
        full[(0, 0)] += 0.01;
        full[(1, 1)] += 0.01;
        assert!((obj.hessian(&w, &d).unwrap() - full).amax() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let d = identity_data();
        let obj = Objective::ridge(1.0).unwrap();
        let w = DVector::zeros(3);
        assert!(matches!(
            obj.loss(&w, &d),
            Err(ObjectiveError::DimensionMismatch {
                expected: 2,
                got: 3
            })
        ));
        assert!(obj.gradient(&w, &d).is_err());
        assert!(obj.hessian(&w, &d).is_err());
        assert!(obj.hessian_sqrt(&w, &d).is_err());
    }

    #[test]
    fn invalid_lambda() {
        assert!(matches!(
            Objective::logistic(0.0),
            Err(ObjectiveError::InvalidLambda(_))
        ));
        assert!(Objective::logistic(f64::NAN).is_err());
    }

    #[test]
    fn constants_on_identity() {
        let c = Objective::ridge(0.1)
            .unwrap()
            .estimate_constants(&identity_data())
            .unwrap();
        assert!((c.l1 - 0.6).abs() < 1e-9);
        assert_eq!(c.gamma, 0.1);
        let full = Objective::new(ObjectiveKind::Logistic, 0.1, RegConvention::Full).unwrap();
        assert_eq!(
            full.estimate_constants(&identity_data()).unwrap().gamma,
            0.2
        );
    }

    #[test]
    fn power_iteration_matches_known_spectrum() {
        // Q diag(5, 3, 2, 1, 0.5) Qᵀ with Q from a QR factorization.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let q = g.qr().q();
        let spectrum = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 3.0, 2.0, 1.0, 0.5]));
        let a = &q * spectrum * q.transpose();
        let top = power_iteration(&a, 1e-6, 500, 3).unwrap();
        assert!((top - 5.0).abs() / 5.0 <= 1e-5, "{top}");
        let exact = a.symmetric_eigen().eigenvalues.max();
        assert!((top - exact).abs() / exact <= 1e-5);
    }

    #[test]
    fn power_iteration_rejects_non_finite() {
        let a = DMatrix::from_element(2, 2, f64::INFINITY);
        assert!(matches!(
            power_iteration(&a, 1e-6, 10, 0),
            Err(ObjectiveError::PowerIterationDivergence)
        ));
    }

    #[test]
    fn ridge_oracle_takes_one_step() {
        let d = synth_logistic(50, 6, 3, 0.1).unwrap();
        let sol = Objective::ridge(0.01)
            .unwrap()
            .newton_oracle(&d, 1e-10, 50)
            .unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.grad_norm <= 1e-10);
    }

    #[test]
    fn logistic_oracle_converges_quickly_and_reproducibly() {
        let d = synth_logistic(200, 10, 3, 0.1).unwrap();
        let obj = Objective::logistic(1e-3).unwrap();
        let a = obj.newton_oracle(&d, 1e-10, 100).unwrap();
        assert!(a.iterations <= 15, "{} iterations", a.iterations);
        let b = obj.newton_oracle(&d, 1e-10, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_reports_best_iterate_when_budget_exhausted() {
        let d = synth_logistic(200, 10, 3, 0.1).unwrap();
        let obj = Objective::logistic(1e-3).unwrap();
        match obj.newton_oracle(&d, 1e-14, 1) {
            Err(ObjectiveError::DidNotConverge { best }) => {
                assert_eq!(best.iterations, 1);
                assert!(best.grad_norm > 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn solve_spd_rejects_indefinite() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(solve_spd(k, &DVector::from_vec(vec![1.0, 1.0])).is_none());
    }
}
