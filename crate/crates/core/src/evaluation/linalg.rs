//! Small dense linear algebra: cyclic Jacobi eigensolver, determinants and
//! helpers for the Procrustes and PCA code paths.

use ndarray::{Array1, Array2, ArrayView2};

use super::EvalError;
use crate::Real;

/// Eigen-decomposition of a symmetric matrix.
///
/// `values` are sorted in descending order and column `i` of `vectors` is
/// the unit eigenvector belonging to `values[i]`.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Array1<T>,
    pub vectors: Array2<T>,
}

impl<T: Real> SymEigen<T> {
    /// Reassembles `V diag(values) V^T`.
    pub fn reconstruct(&self) -> Array2<T> {
        let scaled = &self.vectors * &self.values.view().insert_axis(ndarray::Axis(0));
        scaled.dot(&self.vectors.t())
    }
}

const MAX_SWEEPS: usize = 100;

/// Frobenius norm of the strictly off-diagonal part.
fn off_diagonal_norm<T: Real>(a: &Array2<T>) -> T {
    let n = a.nrows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[[i, j]] * a[[i, j]];
            }
        }
    }
    acc.sqrt()
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
///
/// Intended for the small matrices that show up in this crate (burst
/// covariances, Procrustes Gram matrices, PCA of low-dimensional clouds).
/// Iterates until the off-diagonal norm drops below `1e-12` relative to the
/// Frobenius norm of the input, or an absolute floor for the zero matrix.
pub fn sym_eig_small<T: Real>(s: ArrayView2<T>) -> Result<SymEigen<T>, EvalError> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(EvalError::Shape(format!(
            "eigen-decomposition needs a square matrix, got {}x{}",
            n,
            s.ncols()
        )));
    }
    let scale = s.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let sym_tol = T::lit(1e-10) * scale.max(T::one());
    for i in 0..n {
        for j in (i + 1)..n {
            if (s[[i, j]] - s[[j, i]]).abs() > sym_tol {
                return Err(EvalError::NotSymmetric { row: i, col: j });
            }
        }
    }

    // Symmetrize to remove sub-tolerance asymmetry before rotating.
    let half = T::lit(0.5);
    let mut a = Array2::from_shape_fn((n, n), |(i, j)| half * (s[[i, j]] + s[[j, i]]));
    let mut v = Array2::<T>::eye(n);

    let frob = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let eps = T::epsilon();
    let tol = (T::lit(1e-12) * frob).max(T::min_positive_value());
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= eps * eps * frob {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let sn = t * c;

                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - sn * akq;
                    a[[k, q]] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - sn * aqk;
                    a[[q, k]] = sn * apk + c * aqk;
                }
                a[[p, q]] = T::zero();
                a[[q, p]] = T::zero();

                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - sn * vkq;
                    v[[k, q]] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[[j, j]]
            .partial_cmp(&a[[i, i]])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// Determinant by LU decomposition with partial pivoting.
pub fn determinant<T: Real>(m: ArrayView2<T>) -> T {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "determinant of a non-square matrix");
    let mut a = m.to_owned();
    let mut det = T::one();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[[i, col]]
                    .abs()
                    .partial_cmp(&a[[j, col]].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        if a[[pivot, col]] == T::zero() {
            return T::zero();
        }
        if pivot != col {
            for k in 0..n {
                a.swap([pivot, k], [col, k]);
            }
            det = -det;
        }
        let d = a[[col, col]];
        det *= d;
        for r in (col + 1)..n {
            let f = a[[r, col]] / d;
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let upd = a[[col, k]] * f;
                a[[r, k]] -= upd;
            }
        }
    }
    det
}

/// Unbiased sample covariance of the rows of `x` (divisor `rows - 1`).
pub fn sample_covariance<T: Real>(x: ArrayView2<T>) -> Array2<T> {
    let m = x.nrows();
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty sample matrix");
    let centered = &x - &mean.insert_axis(ndarray::Axis(0));
    let denom = T::from_usize(m.saturating_sub(1).max(1)).unwrap();
    centered.t().dot(&centered) / denom
}

/// Completes a set of orthonormal columns to a full orthonormal basis.
///
/// The first `k` columns of `basis` are taken as given; the rest are filled
/// by Gram-Schmidt against the canonical basis vectors.
pub fn complete_orthonormal<T: Real>(basis: &mut Array2<T>, k: usize) {
    let n = basis.nrows();
    let mut filled = k;
    let mut candidate = 0;
    while filled < basis.ncols() && candidate < n {
        let mut v = Array1::<T>::zeros(n);
        v[candidate] = T::one();
        candidate += 1;
        for j in 0..filled {
            let col = basis.column(j);
            let proj = col.dot(&v);
            v.scaled_add(-proj, &col);
        }
        let norm = v.dot(&v).sqrt();
        if norm > T::lit(1e-6) {
            basis.column_mut(filled).assign(&(v / norm));
            filled += 1;
        }
    }
}
