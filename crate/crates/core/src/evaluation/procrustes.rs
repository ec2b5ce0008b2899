//! Least-squares rigid registration between two paired point sets.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::linalg::{complete_orthonormal, determinant, sym_eig_small};
use super::EvalError;
use crate::Real;

/// `x -> Q x + t` with `Q` orthogonal.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: Array2<T>,
    pub translation: Array1<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity(p: usize) -> Self {
        Self {
            rotation: Array2::eye(p),
            translation: Array1::zeros(p),
        }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    /// Applies the transform to every row of `points`.
    pub fn apply(&self, points: ArrayView2<T>) -> Array2<T> {
        points.dot(&self.rotation.t()) + &self.translation.view().insert_axis(Axis(0))
    }

    pub fn apply_point(&self, x: ArrayView1<T>) -> Array1<T> {
        self.rotation.dot(&x) + &self.translation
    }

    /// `self ∘ inner`: first `inner`, then `self`.
    pub fn compose(&self, inner: &RigidTransform<T>) -> RigidTransform<T> {
        RigidTransform {
            rotation: self.rotation.dot(&inner.rotation),
            translation: self.rotation.dot(&inner.translation) + &self.translation,
        }
    }

    pub fn determinant(&self) -> T {
        determinant(self.rotation.view())
    }

    /// Largest entry of `|Q^T Q - I|`.
    pub fn orthogonality_defect(&self) -> T {
        let g = self.rotation.t().dot(&self.rotation) - Array2::<T>::eye(self.dim());
        g.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }
}

/// Sum of squared residuals `Σ ‖Q s_i + t − d_i‖²`.
pub fn residual<T: Real>(
    transform: &RigidTransform<T>,
    source: ArrayView2<T>,
    target: ArrayView2<T>,
) -> T {
    let moved = transform.apply(source);
    (&moved - &target).iter().map(|&x| x * x).sum()
}

/// Fits the rigid motion that best maps `source` rows onto `target` rows.
///
/// The singular value decomposition of the centered cross-covariance is
/// obtained from the eigen-decomposition of its Gram matrix. When
/// `allow_reflection` is false the sign of the weakest singular direction
/// is flipped as needed so that `det(Q) = +1`.
pub fn procrustes_fit<T: Real>(
    source: ArrayView2<T>,
    target: ArrayView2<T>,
    allow_reflection: bool,
) -> Result<RigidTransform<T>, EvalError> {
    if source.dim() != target.dim() {
        return Err(EvalError::Shape(format!(
            "procrustes needs paired point sets of equal shape, got {:?} and {:?}",
            source.dim(),
            target.dim()
        )));
    }
    let (n, p) = source.dim();
    if n < p || p == 0 {
        return Err(EvalError::Degenerate(format!(
            "procrustes needs at least {p} point pairs, got {n}"
        )));
    }
    let src_mean = source.mean_axis(Axis(0)).unwrap();
    let dst_mean = target.mean_axis(Axis(0)).unwrap();
    let src_c = &source - &src_mean.view().insert_axis(Axis(0));
    let dst_c = &target - &dst_mean.view().insert_axis(Axis(0));

    // H = Σ s̃ d̃ᵀ = U S Vᵀ  and  Q = V Uᵀ.
    let h = src_c.t().dot(&dst_c);
    let gram = h.t().dot(&h);
    let eig = sym_eig_small(gram.view())?;
    let v = eig.vectors;
    let top = eig.values[0].max(T::zero()).sqrt();
    let rank_tol = T::lit(1e-10) * top.max(T::min_positive_value());
    let singular: Vec<T> = eig.values.iter().map(|&l| l.max(T::zero()).sqrt()).collect();
    let rank = singular.iter().filter(|&&s| s > rank_tol).count();
    if rank + 1 < p {
        return Err(EvalError::Degenerate(format!(
            "cross-covariance has rank {rank} < {} (collinear or coincident points)",
            p - 1
        )));
    }

    let mut u = Array2::<T>::zeros((p, p));
    for i in 0..rank {
        let col = h.dot(&v.column(i)) / singular[i];
        u.column_mut(i).assign(&col);
    }
    if rank < p {
        complete_orthonormal(&mut u, rank);
    }

    let mut rotation = v.dot(&u.t());
    if !allow_reflection && determinant(rotation.view()) < T::zero() {
        let mut v_fixed = v.clone();
        v_fixed.column_mut(p - 1).mapv_inplace(|x| -x);
        rotation = v_fixed.dot(&u.t());
    }
    let translation = &dst_mean - &rotation.dot(&src_mean);
    Ok(RigidTransform {
        rotation,
        translation,
    })
}
