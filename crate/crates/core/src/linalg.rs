//! Small dense matrix helpers: LU solves, inverses, determinants, symmetric
//! eigenvalues (cyclic Jacobi) and singular values. Everything here works on
//! modest sizes (fiber blocks, slice Gram matrices), so plain dense
//! algorithms are used throughout.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(l, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut s = 0.0;
            for j in 0..self.cols {
                s += self[(i, j)] * v[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Mat {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= s;
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v += *w;
        }
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v -= *w;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Solve `self * x = b` by LU with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(self.rows, self.cols, "solve needs square matrix");
        assert_eq!(b.len(), self.rows);
        let n = self.rows;
        let mut a = self.data.clone();
        let mut x: Vec<f64> = b.to_vec();
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in col + 1..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-300 {
                return Err(Error::Singular {
                    context: "linalg::solve",
                    detail: format!("pivot {col} below threshold"),
                });
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                x.swap(col, piv);
            }
            let d = a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                a[r * n + col] = 0.0;
                for j in col + 1..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
                x[r] -= f * x[col];
            }
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for j in r + 1..n {
                s -= a[r * n + j] * x[j];
            }
            x[r] = s / a[r * n + r];
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Mat> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut out = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e)?;
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }

    pub fn det(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.data.clone();
        let mut sign = 1.0;
        let mut det = 1.0;
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in col + 1..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 {
                return 0.0;
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                sign = -sign;
            }
            let d = a[col * n + col];
            det *= d;
            for r in col + 1..n {
                let f = a[r * n + col] / d;
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
            }
        }
        sign * det
    }

    /// Numerical rank with an absolute singular-value threshold.
    pub fn rank(&self, tol: f64) -> usize {
        self.singular_values().into_iter().filter(|s| *s > tol).count()
    }

    /// Eigenvalues of a symmetric matrix by the cyclic Jacobi method,
    /// ascending order.
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.data.clone();
        // Standard cyclic sweeps; sizes here stay small (<= few hundred).
        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[p * n + q] * a[p * n + q];
                }
            }
            if off < 1e-28 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = if theta >= 0.0 {
                        1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                    } else {
                        -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                    };
                    let c = 1.0 / libm::sqrt(1.0 + t * t);
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eig
    }

    /// Singular values (descending) via the symmetric eigenproblem of
    /// `AᵀA` (or `AAᵀ`, whichever is smaller).
    pub fn singular_values(&self) -> Vec<f64> {
        let gram = if self.rows >= self.cols {
            self.transpose().matmul(self)
        } else {
            self.matmul(&self.transpose())
        };
        let mut sv: Vec<f64> =
            gram.sym_eigenvalues().into_iter().map(|l| libm::sqrt(l.max(0.0))).collect();
        sv.reverse();
        sv
    }

    pub fn min_singular_value(&self) -> f64 {
        self.singular_values().last().copied().unwrap_or(0.0)
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Euclidean norm of a slice.
pub fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max absolute entry.
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn solve_recovers_rhs() {
        let mut rng = Rng::new(1);
        for n in 1..=6 {
            let mut m = Mat::identity(n);
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] += 0.3 * rng.symmetric(1.0);
                }
            }
            let x: Vec<f64> = (0..n).map(|_| rng.symmetric(2.0)).collect();
            let b = m.matvec(&x);
            let got = m.solve(&b).unwrap();
            for (a, b) in x.iter().zip(&got) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        let m = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(m.solve(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn inverse_times_self_is_identity() {
        let m = Mat::from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let inv = m.inverse().unwrap();
        let id = m.matmul(&inv);
        assert!((id[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((id[(1, 1)] - 1.0).abs() < 1e-12);
        assert!(id[(0, 1)].abs() < 1e-12);
        assert!(id[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn jacobi_eigenvalues_of_diagonalizable() {
        let m = Mat::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let eig = m.sym_eigenvalues();
        assert!((eig[0] - 1.0).abs() < 1e-10);
        assert!((eig[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn singular_values_of_diag() {
        let m = Mat::from_rows(&[&[3.0, 0.0], &[0.0, -4.0]]);
        let sv = m.singular_values();
        assert!((sv[0] - 4.0).abs() < 1e-10);
        assert!((sv[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn rank_detects_deficiency() {
        let m = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert_eq!(m.rank(1e-10), 1);
        assert_eq!(Mat::identity(3).rank(1e-10), 3);
    }

    #[test]
    fn det_matches_hand_value() {
        let m = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!((m.det() + 2.0).abs() < 1e-12);
    }
}
