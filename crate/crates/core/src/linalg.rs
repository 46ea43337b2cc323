//! Small dense linear algebra for the latent-dimension-sized systems the
//! samplers solve thousands of times per sweep.
//!
//! Kernels operate on row-major slices so the hot loops avoid allocating;
//! the `ndarray` wrappers are for the less frequent callers.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// In-place Cholesky factorization of the symmetric positive-definite `n×n`
/// matrix in `a` (row-major). On success the lower triangle holds `L` with
/// `A = L Lᵀ` and the strict upper triangle is zeroed.
pub fn cholesky_in_place<T: Real>(a: &mut [T], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            let l = a[j * n + k];
            d -= l * l;
        }
        if !(d > T::zero()) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in (j + 1)..n {
            a[j * n + k] = T::zero();
        }
    }
    true
}

/// Solves `L y = b` in place.
pub fn solve_lower_in_place<T: Real>(l: &[T], n: usize, b: &mut [T]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `Lᵀ x = b` in place.
pub fn solve_lower_transpose_in_place<T: Real>(l: &[T], n: usize, b: &mut [T]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// `log det A` from its Cholesky factor.
pub fn log_det_from_cholesky<T: Real>(l: &[T], n: usize) -> T {
    let two = T::lit(2.0);
    (0..n).map(|i| two * l[i * n + i].ln()).sum()
}

pub fn cholesky<T: Real>(a: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape(format!("cholesky of {}x{} matrix", n, a.ncols())));
    }
    let mut buf: Vec<T> = a.iter().copied().collect();
    if !cholesky_in_place(&mut buf, n) {
        return Err(Error::Numerical("matrix is not positive definite".into()));
    }
    Ok(Array2::from_shape_vec((n, n), buf).expect("square buffer"))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse<T: Real>(a: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let n = a.nrows();
    let l = cholesky(a)?;
    let l = l.as_slice().expect("standard layout");
    let mut inv = Array2::zeros((n, n));
    let mut col = vec![T::zero(); n];
    for j in 0..n {
        col.iter_mut().for_each(|c| *c = T::zero());
        col[j] = T::one();
        solve_lower_in_place(l, n, &mut col);
        solve_lower_transpose_in_place(l, n, &mut col);
        for i in 0..n {
            inv[[i, j]] = col[i];
        }
    }
    Ok(inv)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as columns.
pub fn symmetric_eigen<T: Real>(a: ArrayView2<'_, T>) -> (Array1<T>, Array2<T>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    let mut m = a.to_owned();
    let mut v = Array2::<T>::eye(n);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..n {
            diag += m[[i, i]] * m[[i, i]];
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off <= eps * eps * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[[j, j]]
            .partial_cmp(&m[[i, i]])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    (values, vectors)
}

/// Orthonormal basis for the column span of `a` (modified Gram–Schmidt).
/// Columns that are numerically dependent on earlier ones are dropped.
pub fn orthonormal_columns<T: Real>(a: ArrayView2<'_, T>) -> Array2<T> {
    let scale = a.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let tol = scale * T::lit(1e-10);
    let mut kept: Vec<Array1<T>> = Vec::new();
    for col in a.columns() {
        let mut v = col.to_owned();
        for q in &kept {
            let proj = q.dot(&v);
            v.scaled_add(-proj, q);
        }
        let norm = v.dot(&v).sqrt();
        if norm > tol {
            kept.push(v / norm);
        }
    }
    let mut out = Array2::zeros((a.nrows(), kept.len()));
    for (j, q) in kept.iter().enumerate() {
        out.column_mut(j).assign(q);
    }
    out
}

/// Principal angles (radians, ascending) between the column spans of `a` and `b`.
pub fn principal_angles<T: Real>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Vec<T> {
    let qa = orthonormal_columns(a);
    let qb = orthonormal_columns(b);
    let m = qa.t().dot(&qb);
    let gram = m.t().dot(&m);
    let (vals, _) = symmetric_eigen(gram.view());
    let k = qa.ncols().min(qb.ncols());
    vals.iter()
        .take(k)
        .map(|&s2| s2.max(T::zero()).sqrt().min(T::one()).acos())
        .collect()
}

/// Orthogonal polar factor `R = M (MᵀM)^{-1/2}` of a square matrix, i.e. the
/// rotation minimizing `‖M - R‖_F`. `None` when `M` is numerically singular.
pub fn polar_rotation<T: Real>(m: ArrayView2<'_, T>) -> Option<Array2<T>> {
    let n = m.nrows();
    let gram = m.t().dot(&m);
    let (vals, vecs) = symmetric_eigen(gram.view());
    let top = vals.iter().fold(T::zero(), |a, &b| a.max(b));
    if !(top > T::zero()) || vals.iter().any(|&v| v <= top * T::lit(1e-12)) {
        return None;
    }
    let mut inv_sqrt = Array2::zeros((n, n));
    for k in 0..n {
        let w = T::one() / vals[k].sqrt();
        let col = vecs.column(k);
        for i in 0..n {
            for j in 0..n {
                inv_sqrt[[i, j]] += w * col[i] * col[j];
            }
        }
    }
    Some(m.dot(&inv_sqrt))
}

/// Residuals of the least-squares regression of every column of `y` on the
/// columns of `g` (plus an intercept when asked).
pub fn ols_residuals<T: Real>(y: ArrayView2<'_, T>, g: ArrayView2<'_, T>, intercept: bool) -> Result<Array2<T>> {
    let n = y.nrows();
    if g.nrows() != n {
        return Err(Error::Shape(format!("{} response rows, {} regressor rows", n, g.nrows())));
    }
    let p = g.ncols() + intercept as usize;
    if p == 0 {
        return Ok(y.to_owned());
    }
    let mut design = Array2::zeros((n, p));
    if intercept {
        design.column_mut(0).fill(T::one());
    }
    design
        .slice_mut(ndarray::s![.., intercept as usize..])
        .assign(&g);
    let gram = design.t().dot(&design);
    let inv = spd_inverse(gram.view())
        .map_err(|_| Error::Numerical("regressors are collinear".into()))?;
    let coef = inv.dot(&design.t().dot(&y));
    Ok(&y - &design.dot(&coef))
}

#[cfg(test)]
mod tests {
    #[test]
    fn ols_residuals_are_orthogonal_to_regressors() {
        let g: Array2<f64> = Array2::from_shape_fn((20, 2), |(i, j)| ((i * (j + 3)) % 7) as f64 - 2.0);
        let y: Array2<f64> = Array2::from_shape_fn((20, 3), |(i, j)| ((i * i + j) % 5) as f64);
        let r = super::ols_residuals(y.view(), g.view(), true).unwrap();
        for c in 0..3 {
            assert!(r.column(c).sum().abs() < 1e-10);
            for k in 0..2 {
                assert!(r.column(c).dot(&g.column(k)).abs() < 1e-10);
            }
        }
    }

    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs() {
        let a: Array2<f64> = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(l[[0, 1]], 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view()).is_err());
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a: Array2<f64> = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let inv = spd_inverse(a.view()).unwrap();
        let id = inv.dot(&a);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_eigen_matches_definition() {
        let a = array![[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(a.view());
        // eigenvalues of the 1-D Laplacian: 2 - 2cos(kπ/4)
        let mut want = [2.0 + 2f64.sqrt(), 2.0, 2.0 - 2f64.sqrt()];
        want.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for k in 0..3 {
            assert!((vals[k] - want[k]).abs() < 1e-12);
            let v = vecs.column(k);
            let av = a.dot(&v);
            for i in 0..3 {
                assert!((av[i] - vals[k] * v[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn polar_factor_is_orthogonal_and_recovers_rotation() {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = array![[c, -s], [s, c]];
        let r = polar_rotation(rot.view()).unwrap();
        for (x, y) in r.iter().zip(rot.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let m: Array2<f64> = array![[2.0, 0.5], [0.1, 1.0]];
        let r = polar_rotation(m.view()).unwrap();
        let id = r.t().dot(&r);
        assert!((id[[0, 0]] - 1.0).abs() < 1e-12 && id[[0, 1]].abs() < 1e-12);
        assert!(polar_rotation(array![[1.0, 2.0], [2.0, 4.0]].view()).is_none());
    }

    #[test]
    fn principal_angle_of_rotated_plane() {
        let a = array![[1.0], [0.0]];
        let b = array![[1.0], [1.0]];
        let ang = principal_angles(a.view(), b.view());
        assert!((ang[0] - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }
}
