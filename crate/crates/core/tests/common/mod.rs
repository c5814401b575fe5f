//! Reference implementations for integration tests. Plain `Vec` arithmetic and
//! Gaussian elimination, sharing no code with the library's nalgebra paths.
#![allow(dead_code)]

use flens::{Dataset, ObjectiveKind};

pub struct Plain {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn sig(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Plain {
    pub fn from(d: &Dataset) -> Self {
        Self {
            x: (0..d.rows()).map(|i| d.row(i)).collect(),
            y: d.labels().iter().copied().collect(),
        }
    }

    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    pub fn loss(&self, kind: ObjectiveKind, reg: f64, w: &[f64]) -> f64 {
        let data: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(x, &y)| match kind {
                ObjectiveKind::Logistic => {
                    let z = y * dot(x, w);
                    if z > 0.0 {
                        (-z).exp().ln_1p()
                    } else {
                        -z + z.exp().ln_1p()
                    }
                }
                ObjectiveKind::RidgeLs => 0.5 * (dot(x, w) - y).powi(2),
            })
            .sum();
        data / self.n() + 0.5 * reg * dot(w, w)
    }

    pub fn grad(&self, kind: ObjectiveKind, reg: f64, w: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = w.iter().map(|wi| reg * wi).collect();
        for (x, &y) in self.x.iter().zip(&self.y) {
            let r = match kind {
                ObjectiveKind::Logistic => -y * sig(-y * dot(x, w)),
                ObjectiveKind::RidgeLs => dot(x, w) - y,
            };
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += r * xj / self.n();
            }
        }
        g
    }

    pub fn hess(&self, kind: ObjectiveKind, reg: f64, w: &[f64]) -> Vec<Vec<f64>> {
        let m = w.len();
        let mut h = vec![vec![0.0; m]; m];
        for (x, &y) in self.x.iter().zip(&self.y) {
            let c = match kind {
                ObjectiveKind::Logistic => {
                    let p = sig(y * dot(x, w));
                    p * (1.0 - p)
                }
                ObjectiveKind::RidgeLs => 1.0,
            } / self.n();
            for a in 0..m {
                for b in 0..m {
                    h[a][b] += c * x[a] * x[b];
                }
            }
        }
        for (a, row) in h.iter_mut().enumerate() {
            row[a] += reg;
        }
        h
    }
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Undamped centralized Newton from zero; entry t is the iterate after t steps.
pub fn newton_iterates(
    p: &Plain,
    kind: ObjectiveKind,
    reg: f64,
    dim: usize,
    steps: usize,
) -> Vec<Vec<f64>> {
    let mut w = vec![0.0; dim];
    let mut out = vec![w.clone()];
    for _ in 0..steps {
        let d = solve(p.hess(kind, reg, &w), p.grad(kind, reg, &w));
        for (wi, di) in w.iter_mut().zip(&d) {
            *wi -= di;
        }
        out.push(w.clone());
    }
    out
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// ‖a − b‖ / ‖b‖, with 0 when both vanish.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = norm(b);
    if nb == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / nb
    }
}
