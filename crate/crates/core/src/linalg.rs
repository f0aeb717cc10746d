//! Minimal dense linear algebra: a square matrix type and an updatable
//! Cholesky factorisation.
//!
//! The QP active-set solver fixes and frees one variable at a time, so the
//! factor supports appending a row/column and removing one at an arbitrary
//! position (Givens re-triangularisation) in O(dim^2) instead of a full
//! refactorisation.

use crate::error::{Error, Result};

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// `scale * I`.
    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = scale;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| dot(self.row(i), x))
            .collect()
    }

    /// Symmetric rank-one update `A += alpha * v * v^T`.
    pub fn add_outer(&mut self, alpha: f64, v: &[f64]) {
        debug_assert_eq!(v.len(), self.n);
        for i in 0..self.n {
            let vi = alpha * v[i];
            if vi == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.n..(i + 1) * self.n];
            for (rj, &vj) in row.iter_mut().zip(v) {
                *rj += vi * vj;
            }
        }
    }
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Upper-triangular Cholesky factor `R` with `A = R^T R`, supporting
/// append/remove of a row-column pair.
///
/// The factor lives in the leading `dim x dim` block of a `cap`-strided
/// buffer so updates never reallocate.
#[derive(Debug, Clone)]
pub struct UpdatableCholesky {
    cap: usize,
    dim: usize,
    r: Vec<f64>,
}

impl UpdatableCholesky {
    /// Factor the principal submatrix `a[idx, idx]`. `cap` bounds the size the
    /// factor may later grow to via [`append`](Self::append).
    pub fn from_submatrix(a: &SquareMatrix, idx: &[usize], cap: usize) -> Result<Self> {
        let dim = idx.len();
        assert!(dim <= cap);
        let mut f = UpdatableCholesky {
            cap,
            dim: 0,
            r: vec![0.0; cap * cap],
        };
        // Column-by-column: identical to appending one variable at a time,
        // but without the intermediate copies.
        for (j, &cj) in idx.iter().enumerate() {
            let col: Vec<f64> = idx[..j].iter().map(|&ci| a.get(ci, cj)).collect();
            f.append(&col, a.get(cj, cj))?;
        }
        debug_assert_eq!(f.dim, dim);
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.cap + j]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.r[i * self.cap + j]
    }

    /// Extend the factored matrix by one row/column: `[[A, c], [c^T, d]]`.
    pub fn append(&mut self, col: &[f64], diag: f64) -> Result<()> {
        debug_assert_eq!(col.len(), self.dim);
        assert!(self.dim < self.cap, "cholesky capacity exhausted");
        let m = self.dim;
        // Solve R^T w = c.
        let mut w = col.to_vec();
        for i in 0..m {
            let mut s = w[i];
            for k in 0..i {
                s -= self.at(k, i) * w[k];
            }
            w[i] = s / self.at(i, i);
        }
        let rest = diag - dot(&w, &w);
        if rest <= 0.0 || !rest.is_finite() {
            return Err(Error::Domain(format!(
                "matrix not positive definite (pivot {rest:.3e} at dimension {m})"
            )));
        }
        for (i, &wi) in w.iter().enumerate() {
            *self.at_mut(i, m) = wi;
        }
        *self.at_mut(m, m) = rest.sqrt();
        self.dim += 1;
        Ok(())
    }

    /// Remove the row/column at `pos` from the factored matrix.
    pub fn remove(&mut self, pos: usize) {
        let d = self.dim;
        debug_assert!(pos < d);
        // Drop column `pos`; columns to its right shift left by one.
        for i in 0..d {
            for j in pos..d - 1 {
                let v = self.at(i, j + 1);
                *self.at_mut(i, j) = v;
            }
            *self.at_mut(i, d - 1) = 0.0;
        }
        // Rows pos.. now carry one subdiagonal; chase it with Givens rotations.
        for k in pos..d - 1 {
            let a = self.at(k, k);
            let b = self.at(k + 1, k);
            let (c, s) = givens(a, b);
            for j in k..d - 1 {
                let top = self.at(k, j);
                let bot = self.at(k + 1, j);
                *self.at_mut(k, j) = c * top + s * bot;
                *self.at_mut(k + 1, j) = -s * top + c * bot;
            }
            // Keep the diagonal positive; a sign flip of a factor row is free.
            if self.at(k, k) < 0.0 {
                for j in k..d - 1 {
                    let v = -self.at(k, j);
                    *self.at_mut(k, j) = v;
                }
            }
        }
        // Last row is now numerically zero; drop it.
        for j in 0..d {
            *self.at_mut(d - 1, j) = 0.0;
        }
        self.dim -= 1;
    }

    /// Solve `A x = b` using the factor (`R^T R x = b`).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.dim);
        let d = self.dim;
        let mut x = b.to_vec();
        // Forward: R^T y = b.
        for i in 0..d {
            let mut s = x[i];
            for k in 0..i {
                s -= self.at(k, i) * x[k];
            }
            x[i] = s / self.at(i, i);
        }
        // Backward: R x = y.
        for i in (0..d).rev() {
            let mut s = x[i];
            for k in i + 1..d {
                s -= self.at(i, k) * x[k];
            }
            x[i] = s / self.at(i, i);
        }
        x
    }
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0);
    }
    let h = a.hypot(b);
    (a / h, b / h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    fn random_spd(n: usize, rng: &mut Prng) -> SquareMatrix {
        let mut m = SquareMatrix::zeros(n);
        let raw: Vec<f64> = (0..n * n).map(|_| rng.range(-1.0, 1.0)).collect();
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += raw[k * n + i] * raw[k * n + j];
                }
                m.set(i, j, s + if i == j { n as f64 } else { 0.0 });
            }
        }
        m
    }

    fn reconstruct(f: &UpdatableCholesky) -> SquareMatrix {
        let d = f.dim();
        let mut m = SquareMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d.min(i + 1).min(j + 1) {
                    s += f.at(k, i) * f.at(k, j);
                }
                m.set(i, j, s);
            }
        }
        m
    }

    fn assert_close(a: &SquareMatrix, b: &SquareMatrix, tol: f64) {
        assert_eq!(a.n(), b.n());
        for i in 0..a.n() {
            for j in 0..a.n() {
                assert!(
                    (a.get(i, j) - b.get(i, j)).abs() < tol,
                    "entry ({i},{j}): {} vs {}",
                    a.get(i, j),
                    b.get(i, j)
                );
            }
        }
    }

    #[test]
    fn factor_reconstructs_matrix() {
        let mut rng = Prng::seed_from(11);
        for n in [1, 2, 5, 12] {
            let a = random_spd(n, &mut rng);
            let idx: Vec<usize> = (0..n).collect();
            let f = UpdatableCholesky::from_submatrix(&a, &idx, n).unwrap();
            assert_close(&reconstruct(&f), &a, 1e-9);
        }
    }

    #[test]
    fn solve_matches_matvec() {
        let mut rng = Prng::seed_from(12);
        let n = 9;
        let a = random_spd(n, &mut rng);
        let idx: Vec<usize> = (0..n).collect();
        let f = UpdatableCholesky::from_submatrix(&a, &idx, n).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.range(-2.0, 2.0)).collect();
        let b = a.matvec(&x);
        let solved = f.solve(&b);
        for (xs, xr) in solved.iter().zip(&x) {
            assert!((xs - xr).abs() < 1e-9);
        }
    }

    #[test]
    fn remove_matches_fresh_factor_of_submatrix() {
        let mut rng = Prng::seed_from(13);
        let n = 10;
        let a = random_spd(n, &mut rng);
        for pos in [0, 3, 9] {
            let idx: Vec<usize> = (0..n).collect();
            let mut f = UpdatableCholesky::from_submatrix(&a, &idx, n).unwrap();
            f.remove(pos);
            let remaining: Vec<usize> = (0..n).filter(|&i| i != pos).collect();
            let fresh = UpdatableCholesky::from_submatrix(&a, &remaining, n).unwrap();
            assert_close(&reconstruct(&f), &reconstruct(&fresh), 1e-9);
        }
    }

    #[test]
    fn repeated_add_remove_stays_consistent() {
        let mut rng = Prng::seed_from(14);
        let n = 8;
        let a = random_spd(n, &mut rng);
        // Free set tracked alongside the factor, mutated in random order.
        let mut free: Vec<usize> = (0..n).collect();
        let mut f = UpdatableCholesky::from_submatrix(&a, &free, n).unwrap();
        for step in 0..50 {
            if !free.is_empty() && (free.len() == n || step % 2 == 0) {
                let pos = rng.below(free.len() as u64) as usize;
                f.remove(pos);
                free.remove(pos);
            } else {
                let absent: Vec<usize> = (0..n).filter(|i| !free.contains(i)).collect();
                let pick = absent[rng.below(absent.len() as u64) as usize];
                let col: Vec<f64> = free.iter().map(|&i| a.get(i, pick)).collect();
                f.append(&col, a.get(pick, pick)).unwrap();
                free.push(pick);
            }
            let fresh = UpdatableCholesky::from_submatrix(&a, &free, n).unwrap();
            assert_close(&reconstruct(&f), &reconstruct(&fresh), 1e-8);
        }
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let mut m = SquareMatrix::zeros(2);
        m.set(0, 0, 1.0);
        m.set(1, 1, -1.0);
        let idx = [0usize, 1];
        assert!(UpdatableCholesky::from_submatrix(&m, &idx, 2).is_err());
    }
}
