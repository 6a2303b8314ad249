//! Small dense linear algebra: row-major matrices, Cholesky factorization and
//! minimum-norm least squares through column-pivoted Householder QR.
//!
//! Dimensions in this crate are tiny (parameter and statistic vectors of at most
//! a handful of entries), so everything here favors clarity over blocking.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

// Needed without std; shadowed by inherent methods when std is linked.
#[allow(unused_imports)]
use num_traits::Float as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Matrix::from_row_major", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_dim("Matrix::from_rows", cols, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        check_dim("Matrix::matmul", self.cols, other.rows)?;
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// `self * v`
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim("Matrix::mul_vec", self.cols, v.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ * v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim("Matrix::tr_mul_vec", self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    lower: Matrix,
}

impl Cholesky {
    /// Factorizes a symmetric positive definite matrix. Only the lower triangle is read.
    pub fn new(a: &Matrix) -> Result<Self> {
        check_dim("Cholesky::new", a.rows(), a.cols())?;
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::Singular);
            }
            let d = diag.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        let n = self.dim();
        check_dim("Cholesky::solve", n, x.len())?;
        let l = &self.lower;
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[(i, k)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        Ok(())
    }

    /// `L v`, used to color standard normal draws.
    pub fn lower_mul(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.lower.mul_vec(v)
    }
}

/// Minimum-norm least-squares solution of `A X ≈ B`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    /// `cols(A) × cols(B)` solution.
    pub solution: Matrix,
    /// Numerical rank of `A` under the relative tolerance.
    pub rank: usize,
    /// Frobenius norm of `A X − B`.
    pub residual: f64,
}

struct Reflector {
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    /// Householder reflector `I − β v vᵀ` mapping `x` onto a multiple of `e₁`.
    fn new(x: &[f64]) -> (Self, f64) {
        let alpha = norm(x);
        let mut v = x.to_vec();
        if alpha == 0.0 {
            return (Self { v, beta: 0.0 }, 0.0);
        }
        let r = if x[0] > 0.0 { -alpha } else { alpha };
        v[0] -= r;
        let vtv = dot(&v, &v);
        let beta = if vtv == 0.0 { 0.0 } else { 2.0 / vtv };
        (Self { v, beta }, r)
    }

    /// Applies the reflector to `y[offset..]`.
    fn apply(&self, y: &mut [f64]) {
        if self.beta == 0.0 {
            return;
        }
        let s = self.beta * dot(&self.v, y);
        for (yi, vi) in y.iter_mut().zip(&self.v) {
            *yi -= s * vi;
        }
    }
}

fn column(a: &Matrix, j: usize, from: usize) -> Vec<f64> {
    (from..a.rows()).map(|i| a[(i, j)]).collect()
}

fn set_column(a: &mut Matrix, j: usize, from: usize, v: &[f64]) {
    for (k, &x) in v.iter().enumerate() {
        a[(from + k, j)] = x;
    }
}

/// Solves `min ‖A X − B‖_F` returning the minimum-norm `X`.
///
/// Uses Householder QR with column pivoting on `A`; columns whose remaining norm
/// falls to `rel_tol · ‖A‖_F` or below are treated as numerically dependent. When
/// `A` is rank deficient the trapezoidal factor is reduced once more (a complete
/// orthogonal decomposition) so that the returned solution has minimum norm.
pub fn lstsq_min_norm(a: &Matrix, b: &Matrix, rel_tol: f64) -> Result<LeastSquares> {
    check_dim("lstsq_min_norm", a.rows(), b.rows())?;
    let (m, q) = (a.rows(), a.cols());
    let nrhs = b.cols();
    let mut r = a.clone();
    let mut qtb = b.clone();
    let mut perm: Vec<usize> = (0..q).collect();
    let tol = rel_tol * a.frobenius_norm();
    let steps = m.min(q);
    let mut rank = 0;

    for k in 0..steps {
        // Pivot: largest remaining column norm.
        let (mut best, mut best_norm) = (k, -1.0);
        for j in k..q {
            let nj = norm(&column(&r, j, k));
            if nj > best_norm {
                best = j;
                best_norm = nj;
            }
        }
        if best_norm <= tol || best_norm == 0.0 {
            break;
        }
        if best != k {
            for i in 0..m {
                let tmp = r[(i, k)];
                r[(i, k)] = r[(i, best)];
                r[(i, best)] = tmp;
            }
            perm.swap(k, best);
        }
        let (h, diag) = Reflector::new(&column(&r, k, k));
        let mut head = vec![0.0; m - k];
        head[0] = diag;
        set_column(&mut r, k, k, &head);
        for j in (k + 1)..q {
            let mut c = column(&r, j, k);
            h.apply(&mut c);
            set_column(&mut r, j, k, &c);
        }
        for j in 0..nrhs {
            let mut c = column(&qtb, j, k);
            h.apply(&mut c);
            set_column(&mut qtb, j, k, &c);
        }
        rank += 1;
    }

    let mut residual_sq = 0.0;
    for i in rank..m {
        for j in 0..nrhs {
            residual_sq += qtb[(i, j)] * qtb[(i, j)];
        }
    }

    let mut solution = Matrix::zeros(q, nrhs);
    if rank == 0 {
        return Ok(LeastSquares {
            solution,
            rank,
            residual: residual_sq.sqrt(),
        });
    }

    // W = R[0..rank, 0..q] is upper trapezoidal with an invertible leading block.
    // Reduce Wᵀ = V S (S upper triangular, rank × rank), then y = V S⁻ᵀ c.
    let mut wt = Matrix::zeros(q, rank);
    for i in 0..rank {
        for j in i..q {
            wt[(j, i)] = r[(i, j)];
        }
    }
    let mut reflectors = Vec::with_capacity(rank);
    if rank < q {
        for k in 0..rank {
            let (h, diag) = Reflector::new(&column(&wt, k, k));
            let mut head = vec![0.0; q - k];
            head[0] = diag;
            set_column(&mut wt, k, k, &head);
            for j in (k + 1)..rank {
                let mut c = column(&wt, j, k);
                h.apply(&mut c);
                set_column(&mut wt, j, k, &c);
            }
            reflectors.push(h);
        }
    }
    // Now S = wt[0..rank, 0..rank] (upper). Without the extra reduction, S = R11ᵀ
    // is lower triangular and Sᵀ = R11 is upper, so handle both layouts.
    for col in 0..nrhs {
        let c: Vec<f64> = (0..rank).map(|i| qtb[(i, col)]).collect();
        let mut y = vec![0.0; q];
        if rank == q {
            // R11 y = c, back substitution.
            for i in (0..rank).rev() {
                let mut s = c[i];
                for j in (i + 1)..rank {
                    s -= r[(i, j)] * y[j];
                }
                y[i] = s / r[(i, i)];
            }
        } else {
            // Sᵀ u = c with S upper ⇒ forward substitution.
            let mut u = vec![0.0; rank];
            for i in 0..rank {
                let mut s = c[i];
                for j in 0..i {
                    s -= wt[(j, i)] * u[j];
                }
                u[i] = s / wt[(i, i)];
            }
            y[..rank].copy_from_slice(&u);
            for (k, h) in reflectors.iter().enumerate().rev() {
                h.apply(&mut y[k..]);
            }
        }
        for (j, &pj) in perm.iter().enumerate() {
            solution[(pj, col)] = y[j];
        }
    }

    Ok(LeastSquares {
        solution,
        rank,
        residual: residual_sq.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let chol = Cholesky::new(&a).unwrap();
        let x = chol.solve(&[2.0, 1.0]).unwrap();
        let back = a.mul_vec(&x).unwrap();
        assert_relative_eq!(back[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(back[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(Cholesky::new(&a), Err(Error::Singular));
    }

    #[test]
    fn lstsq_exact_square_system() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0], vec![5.0]]).unwrap();
        let ls = lstsq_min_norm(&a, &b, 1e-12).unwrap();
        assert_eq!(ls.rank, 2);
        assert_relative_eq!(ls.solution[(0, 0)], 0.8, epsilon = 1e-12);
        assert_relative_eq!(ls.solution[(1, 0)], 1.4, epsilon = 1e-12);
        assert!(ls.residual < 1e-12);
    }

    #[test]
    fn lstsq_rank_deficient_gives_min_norm() {
        // Columns identical: x0 + x1 = 2 has min-norm solution (1, 1).
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![2.0], vec![4.0]]).unwrap();
        let ls = lstsq_min_norm(&a, &b, 1e-10).unwrap();
        assert_eq!(ls.rank, 1);
        assert_relative_eq!(ls.solution[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(ls.solution[(1, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lstsq_zero_matrix() {
        let a = Matrix::zeros(3, 2);
        let b = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![2.0]]).unwrap();
        let ls = lstsq_min_norm(&a, &b, 1e-10).unwrap();
        assert_eq!(ls.rank, 0);
        assert_eq!(ls.solution, Matrix::zeros(2, 1));
        assert_relative_eq!(ls.residual, 3.0, epsilon = 1e-14);
    }
}
