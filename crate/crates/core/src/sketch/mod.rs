//! Seeded sketch operators.
//!
//! An operator `S` maps `R^d → R^k`. SRHT is defined on the zero-padded space
//! `R^{d_pad}` (`d_pad` the next power of two): inputs are padded on the way in
//! and lifted vectors are truncated back to `d` on the way out. Every operator is
//! a pure function of `(kind, k, d, seed)`.

mod hadamard;

pub use hadamard::{fwht, hadamard_entry};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SketchError {
    #[error("invalid sketch dimensions for {kind:?}: k = {k}, d = {d}")]
    InvalidDimensions {
        kind: SketchKind,
        k: usize,
        d: usize,
    },
    #[error("dimension mismatch: operator expects {expected} rows, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T, E = SketchError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SketchKind {
    Srht,
    Gaussian,
    SparseJl,
    Identity,
}

#[derive(Clone, Debug)]
enum Action {
    Srht {
        /// ±1 diagonal over the padded space
        signs: Vec<f64>,
        /// sampled rows of the Hadamard matrix, ascending
        rows: Vec<usize>,
    },
    Dense(DMatrix<f64>),
    CountSketch {
        /// target row for each input coordinate
        bucket: Vec<usize>,
        signs: Vec<f64>,
    },
    Identity,
}

#[derive(Clone, Debug)]
pub struct SketchOperator {
    kind: SketchKind,
    k: usize,
    d: usize,
    d_pad: usize,
    seed: u64,
    action: Action,
}

impl SketchOperator {
    pub fn new(kind: SketchKind, k: usize, d: usize, seed: u64) -> Result<Self> {
        let d_pad = d.next_power_of_two();
        let ok = match kind {
            SketchKind::Srht => k >= 1 && k <= d_pad && d >= 1,
            SketchKind::Gaussian | SketchKind::SparseJl => k >= 1 && k <= d,
            SketchKind::Identity => k == d && d >= 1,
        };
        if !ok {
            return Err(SketchError::InvalidDimensions { kind, k, d });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let action = match kind {
            SketchKind::Srht => {
                let signs = (0..d_pad).map(|_| random_sign(&mut rng)).collect();
                let mut rows = index::sample(&mut rng, d_pad, k).into_vec();
                rows.sort_unstable();
                Action::Srht { signs, rows }
            }
            SketchKind::Gaussian => {
                let scale = 1.0 / (k as f64).sqrt();
                let mut s = DMatrix::zeros(k, d);
                // row-major fill keeps the draw order independent of storage layout
                for i in 0..k {
                    for j in 0..d {
                        s[(i, j)] = scale * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                Action::Dense(s)
            }
            SketchKind::SparseJl => {
                let mut bucket = Vec::with_capacity(d);
                let mut signs = Vec::with_capacity(d);
                for _ in 0..d {
                    bucket.push(rng.random_range(0..k));
                    signs.push(random_sign(&mut rng));
                }
                Action::CountSketch { bucket, signs }
            }
            SketchKind::Identity => Action::Identity,
        };
        Ok(Self {
            kind,
            k,
            d,
            d_pad: if kind == SketchKind::Srht { d_pad } else { d },
            seed,
            action,
        })
    }

    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Padded input dimension (equal to `d` for non-SRHT operators).
    pub fn d_pad(&self) -> usize {
        self.d_pad
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `S·v`
    pub fn apply_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.d {
            return Err(SketchError::DimensionMismatch {
                expected: self.d,
                got: v.len(),
            });
        }
        Ok(self.apply_column(v.as_slice()))
    }

    /// `S·M` for a `d × c` matrix.
    pub fn apply_left(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.d {
            return Err(SketchError::DimensionMismatch {
                expected: self.d,
                got: m.nrows(),
            });
        }
        if let Action::Dense(s) = &self.action {
            return Ok(s * m);
        }
        let mut out = DMatrix::zeros(self.k, m.ncols());
        for (j, col) in m.column_iter().enumerate() {
            let col: Vec<f64> = col.iter().copied().collect();
            out.set_column(j, &self.apply_column(&col));
        }
        Ok(out)
    }

    fn apply_column(&self, v: &[f64]) -> DVector<f64> {
        match &self.action {
            Action::Srht { signs, rows } => {
                let mut buf = vec![0.0; self.d_pad];
                for (b, (x, s)) in buf.iter_mut().zip(v.iter().zip(signs)) {
                    *b = x * s;
                }
                fwht(&mut buf);
                // sqrt(d_pad/k) · (1/sqrt(d_pad)) for the normalized transform
                let scale = 1.0 / (self.k as f64).sqrt();
                DVector::from_iterator(self.k, rows.iter().map(|&r| scale * buf[r]))
            }
            Action::Dense(s) => s * DVector::from_column_slice(v),
            Action::CountSketch { bucket, signs } => {
                let mut out = DVector::zeros(self.k);
                for ((&b, &s), &x) in bucket.iter().zip(signs).zip(v) {
                    out[b] += s * x;
                }
                out
            }
            Action::Identity => DVector::from_column_slice(v),
        }
    }

    /// `Sᵀ·u`, truncated to the first `d` coordinates.
    pub fn apply_transpose(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.k {
            return Err(SketchError::DimensionMismatch {
                expected: self.k,
                got: u.len(),
            });
        }
        Ok(match &self.action {
            Action::Srht { signs, rows } => {
                let mut buf = vec![0.0; self.d_pad];
                for (&r, &x) in rows.iter().zip(u.iter()) {
                    buf[r] = x;
                }
                fwht(&mut buf);
                let scale = 1.0 / (self.k as f64).sqrt();
                DVector::from_iterator(
                    self.d,
                    buf.iter()
                        .zip(signs)
                        .take(self.d)
                        .map(|(b, s)| scale * b * s),
                )
            }
            Action::Dense(s) => s.tr_mul(u),
            Action::CountSketch { bucket, signs } => {
                DVector::from_iterator(self.d, bucket.iter().zip(signs).map(|(&b, &s)| s * u[b]))
            }
            Action::Identity => u.clone(),
        })
    }

    /// `S·H·Sᵀ`, symmetrized.
    pub fn sketch_hessian(&self, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if h.nrows() != self.d || h.ncols() != self.d {
            return Err(SketchError::DimensionMismatch {
                expected: self.d,
                got: h.nrows(),
            });
        }
        let sh = self.apply_left(h)?;
        let mut out = self.apply_left(&sh.transpose())?;
        crate::objective::symmetrize(&mut out);
        Ok(out)
    }

    /// `S·Sᵀ` over the operator's (padded) input space.
    pub fn gram(&self) -> DMatrix<f64> {
        match &self.action {
            Action::Srht { .. } => {
                DMatrix::identity(self.k, self.k) * (self.d_pad as f64 / self.k as f64)
            }
            Action::Identity => DMatrix::identity(self.k, self.k),
            Action::Dense(s) => s * s.transpose(),
            Action::CountSketch { bucket, .. } => {
                let mut g = DMatrix::zeros(self.k, self.k);
                for &b in bucket {
                    g[(b, b)] += 1.0;
                }
                g
            }
        }
    }

    /// Explicit `k × d` matrix, built entry by entry from the operator's
    /// definition rather than through the fast transform.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.action {
            Action::Srht { signs, rows } => {
                let scale = 1.0 / (self.k as f64).sqrt();
                DMatrix::from_fn(self.k, self.d, |i, j| {
                    scale * hadamard_entry(rows[i], j) * signs[j]
                })
            }
            Action::Dense(s) => s.clone(),
            Action::CountSketch { bucket, signs } => {
                let mut s = DMatrix::zeros(self.k, self.d);
                for (j, (&b, &sg)) in bucket.iter().zip(signs).enumerate() {
                    s[(b, j)] = sg;
                }
                s
            }
            Action::Identity => DMatrix::identity(self.d, self.d),
        }
    }
}

fn random_sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

pub fn make_sketch(kind: SketchKind, k: usize, d: usize, seed: u64) -> Result<SketchOperator> {
    SketchOperator::new(kind, k, d, seed)
}

/// Average `SᵀS` over `trials` independently seeded operators and return the
/// largest entrywise deviation from the identity.
///
/// With the SRHT scaling used here (rows orthonormal up to `sqrt(d_pad/k)`),
/// `E[SᵀS] = I` already, so every kind is averaged without extra rescaling.
pub fn test_unbiasedness(
    kind: SketchKind,
    k: usize,
    d: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let trials = trials.max(1);
    let eye = DMatrix::<f64>::identity(d, d);
    let mut acc = DMatrix::zeros(d, d);
    for t in 0..trials {
        let s = make_sketch(kind, k, d, crate::seeds::derive(seed, t as u64))?;
        let dense = s.apply_left(&eye)?;
        acc += dense.tr_mul(&dense);
    }
    acc /= trials as f64;
    Ok((acc - eye).amax())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_is_a_no_op() {
        let s = make_sketch(SketchKind::Identity, 3, 3, 0).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(s.apply_vec(&v).unwrap(), v);
        assert_eq!(s.apply_transpose(&v).unwrap(), v);
        let m = random_matrix(3, 4, 1);
        assert_eq!(s.apply_left(&m).unwrap(), m);
        let h = random_matrix(3, 3, 2);
        let hs = h.clone() + h.transpose();
        assert_eq!(s.sketch_hessian(&hs).unwrap(), hs);
        assert_eq!(s.gram(), DMatrix::identity(3, 3));
    }

    #[test]
    fn srht_pads_to_power_of_two() {
        assert_eq!(make_sketch(SketchKind::Srht, 4, 6, 0).unwrap().d_pad(), 8);
        assert_eq!(make_sketch(SketchKind::Srht, 4, 8, 0).unwrap().d_pad(), 8);
        assert_eq!(
            make_sketch(SketchKind::Srht, 17, 68, 0).unwrap().d_pad(),
            128
        );
    }

    #[test]
    fn srht_is_deterministic() {
        let e1 = DVector::from_fn(10, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let a = make_sketch(SketchKind::Srht, 5, 10, 42)
            .unwrap()
            .apply_vec(&e1)
            .unwrap();
        let b = make_sketch(SketchKind::Srht, 5, 10, 42)
            .unwrap()
            .apply_vec(&e1)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_srht_preserves_norm() {
        let s = make_sketch(SketchKind::Srht, 8, 6, 3).unwrap();
        let v = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5, 0.0, 1.5]);
        let sv = s.apply_vec(&v).unwrap();
        assert!((sv.norm() - v.norm()).abs() < 1e-13);
    }

    #[test]
    fn srht_fast_matches_dense_on_small_input() {
        let s = make_sketch(SketchKind::Srht, 4, 8, 11).unwrap();
        let m = random_matrix(8, 3, 5);
        let fast = s.apply_left(&m).unwrap();
        let dense = s.to_dense() * &m;
        assert!((fast - dense).amax() < 1e-12);
    }

    #[test]
    fn transpose_matches_dense() {
        for kind in [SketchKind::Srht, SketchKind::Gaussian, SketchKind::SparseJl] {
            let s = make_sketch(kind, 5, 12, 9).unwrap();
            let u = DVector::from_fn(5, |i, _| i as f64 - 1.5);
            let fast = s.apply_transpose(&u).unwrap();
            let dense = s.to_dense().tr_mul(&u);
            assert!((fast - dense).amax() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn srht_sketch_of_identity_is_scaled_identity() {
        let s = make_sketch(SketchKind::Srht, 5, 16, 1).unwrap();
        let k = s.sketch_hessian(&DMatrix::identity(16, 16)).unwrap();
        let expected = DMatrix::identity(5, 5) * (16.0 / 5.0);
        assert!((k - expected).amax() < 1e-10);
    }

    #[test]
    fn gaussian_sketch_hessian_matches_triple_product() {
        let g = random_matrix(6, 6, 8);
        let h = &g * g.transpose();
        let s = make_sketch(SketchKind::Gaussian, 3, 6, 5).unwrap();
        let dense = s.to_dense();
        let expected = &dense * &h * dense.transpose();
        assert!((s.sketch_hessian(&h).unwrap() - expected).amax() < 1e-12);
    }

    #[test]
    fn gram_values() {
        let s = make_sketch(SketchKind::Srht, 17, 68, 3).unwrap();
        let expected = DMatrix::identity(17, 17) * (128.0 / 17.0);
        assert!((s.gram() - expected).amax() <= 1e-12);
        let g = make_sketch(SketchKind::Gaussian, 3, 8, 2).unwrap();
        let dense = g.to_dense();
        assert!((g.gram() - &dense * dense.transpose()).amax() < 1e-14);
        let c = make_sketch(SketchKind::SparseJl, 3, 8, 2).unwrap();
        let dense = c.to_dense();
        assert_eq!(c.gram(), &dense * dense.transpose());
    }

    #[test]
    fn srht_gram_equals_padded_dense_product() {
        // gram is over the padded space: compare with the d_pad-wide operator
        let s = make_sketch(SketchKind::Srht, 6, 8, 21).unwrap();
        let dense = s.to_dense();
        assert!((s.gram() - &dense * dense.transpose()).amax() < 1e-12);
    }

    #[test]
    fn invalid_dimensions() {
        use SketchKind::*;
        for (kind, k, d) in [
            (Srht, 0, 4),
            (Srht, 9, 8),
            (Srht, 9, 5),
            (Gaussian, 5, 4),
            (SparseJl, 0, 3),
            (Identity, 2, 3),
        ] {
            assert!(
                matches!(
                    make_sketch(kind, k, d, 0),
                    Err(SketchError::InvalidDimensions { .. })
                ),
                "{kind:?} {k} {d}"
            );
        }
        assert!(make_sketch(Srht, 8, 5, 0).is_ok());
    }

    #[test]
    fn dimension_mismatch_on_apply() {
        let s = make_sketch(SketchKind::Srht, 2, 4, 0).unwrap();
        assert!(matches!(
            s.apply_vec(&DVector::zeros(5)),
            Err(SketchError::DimensionMismatch { .. })
        ));
        assert!(s.apply_left(&DMatrix::zeros(3, 2)).is_err());
        assert!(s.apply_transpose(&DVector::zeros(4)).is_err());
        assert!(s.sketch_hessian(&DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn identity_unbiasedness_is_exact() {
        assert_eq!(
            test_unbiasedness(SketchKind::Identity, 6, 6, 3, 0).unwrap(),
            0.0
        );
    }

    #[test]
    fn sparse_jl_is_unbiased_on_the_diagonal() {
        let dev = test_unbiasedness(SketchKind::SparseJl, 8, 16, 400, 1).unwrap();
        assert!(dev <= 0.2, "{dev}");
    }
}
