//! Logistic regression by damped Newton, for binary outcomes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;
use crate::special::{log1p_exp, sigmoid};

const MAX_ITER: usize = 100;
/// Coefficient magnitude treated as divergence to infinity.
const DIVERGED: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit<T> {
    /// Intercept first, then one slope per design column.
    pub coefficients: Array1<T>,
    pub log_likelihood: T,
    pub iterations: usize,
    pub l2: T,
}

impl<T: Real> LogisticFit<T> {
    pub fn intercept(&self) -> T {
        self.coefficients[0]
    }

    pub fn slopes(&self) -> ArrayView1<'_, T> {
        self.coefficients.slice(ndarray::s![1..])
    }

    /// `P(y = 1 | x)` for each row of `x`.
    pub fn predict(&self, x: ArrayView2<'_, T>) -> Array1<T> {
        let b = self.slopes();
        x.rows()
            .into_iter()
            .map(|r| sigmoid(self.intercept() + r.dot(&b)))
            .collect()
    }
}

fn penalized_loglik<T: Real>(x: ArrayView2<'_, T>, y: ArrayView1<'_, T>, beta: &Array1<T>, l2: T) -> T {
    let b = beta.slice(ndarray::s![1..]);
    let mut ll = T::zero();
    for (r, &yi) in x.rows().into_iter().zip(y.iter()) {
        let eta = beta[0] + r.dot(&b);
        // y η - log(1 + e^η)
        ll += yi * eta - log1p_exp(eta);
    }
    ll - T::lit(0.5) * l2 * b.dot(&b)
}

/// Signs of an optimum at infinity: every row classified correctly, or a
/// linear predictor so large that the fitted probability is saturated.
fn separation<T: Real>(x: ArrayView2<'_, T>, y: ArrayView1<'_, T>, beta: &Array1<T>) -> Option<String> {
    let b = beta.slice(ndarray::s![1..]);
    let mut perfect = true;
    let mut saturated = 0usize;
    for (r, &yi) in x.rows().into_iter().zip(y.iter()) {
        let eta = beta[0] + r.dot(&b);
        let right = (yi == T::one() && eta > T::zero()) || (yi == T::zero() && eta < T::zero());
        perfect &= right;
        if right && eta.abs() > T::lit(30.0) {
            saturated += 1;
        }
    }
    if perfect {
        Some("training data are perfectly classified".into())
    } else if saturated > 0 {
        Some(format!("{saturated} rows have saturated fitted probabilities"))
    } else {
        None
    }
}

/// Maximizes `Σ y log p + (1 - y) log(1 - p) - (l2/2)‖β‖²` (the intercept
/// is not penalized). Stops when the gradient norm falls below `1e-8`.
///
/// With `l2 = 0`, separable data make the maximum lie at infinity; this is
/// reported as [`Error::Separation`].
pub fn fit_logistic<T: Real>(
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    l2: T,
) -> Result<LogisticFit<T>> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::Shape(format!("design has {n} rows, outcome has {}", y.len())));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty design".into()));
    }
    if y.iter().any(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::InvalidArgument("logistic outcome must be 0/1".into()));
    }
    if !(l2 >= T::zero()) {
        return Err(Error::InvalidArgument("l2 must be non-negative".into()));
    }
    let d = p + 1;
    let tol = T::lit(1e-8).max(T::of_usize(n) * T::epsilon() * T::lit(100.0));
    let mut beta = Array1::<T>::zeros(d);
    let mut ll = penalized_loglik(x, y, &beta, l2);
    let slack = T::epsilon() * T::of_usize(n).sqrt() * T::lit(4.0);
    let mut grad = Array1::<T>::zeros(d);
    let mut hess = Array2::<T>::zeros((d, d));
    for iter in 0..MAX_ITER {
        grad.fill(T::zero());
        hess.fill(T::zero());
        let b = beta.slice(ndarray::s![1..]);
        for (r, &yi) in x.rows().into_iter().zip(y.iter()) {
            let mu = sigmoid(beta[0] + r.dot(&b));
            let res = yi - mu;
            let w = mu * (T::one() - mu);
            grad[0] += res;
            hess[[0, 0]] += w;
            for j in 0..p {
                grad[j + 1] += res * r[j];
                hess[[0, j + 1]] += w * r[j];
                for k in j..p {
                    hess[[j + 1, k + 1]] += w * r[j] * r[k];
                }
            }
        }
        for j in 1..d {
            grad[j] -= l2 * beta[j];
            hess[[j, j]] += l2;
            for k in 0..j {
                hess[[j, k]] = hess[[k, j]];
            }
        }
        if grad.dot(&grad).sqrt() < tol {
            if l2 == T::zero() {
                if let Some(why) = separation(x, y, &beta) {
                    return Err(Error::Separation(why));
                }
            }
            return Ok(LogisticFit {
                coefficients: beta,
                log_likelihood: ll,
                iterations: iter,
                l2,
            });
        }
        let mut h = hess.clone();
        let ridge = T::lit(1e-12) * (T::one() + hess.diag().iter().fold(T::zero(), |m, v| m.max(*v)));
        let chol = loop {
            match linalg::cholesky(h.view()) {
                Ok(l) => break l,
                Err(_) => {
                    for j in 0..d {
                        let bump = ridge.max(h[[j, j]] * T::lit(1e-6));
                        h[[j, j]] += bump;
                    }
                    if h.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numerical("logistic Hessian is singular".into()));
                    }
                }
            }
        };
        let mut step = grad.to_vec();
        let ls = chol.as_slice().expect("contiguous");
        linalg::solve_lower_in_place(ls, d, &mut step);
        linalg::solve_lower_transpose_in_place(ls, d, &mut step);
        let step = Array1::from(step);
        let mut t = T::one();
        let mut moved = false;
        for _ in 0..50 {
            let cand = &beta + &(&step * t);
            let lc = penalized_loglik(x, y, &cand, l2);
            // allow for rounding in the objective near the optimum
            if lc.is_finite() && lc >= ll - slack * (T::one() + ll.abs()) {
                beta = cand;
                ll = lc;
                moved = true;
                break;
            }
            t *= T::lit(0.5);
        }
        if l2 == T::zero() && beta.iter().any(|v| v.abs() > T::lit(DIVERGED)) {
            return Err(Error::Separation(format!(
                "coefficients exceeded {DIVERGED} after {} Newton steps",
                iter + 1
            )));
        }
        if !moved {
            break;
        }
    }
    if l2 == T::zero() {
        if let Some(why) = separation(x, y, &beta) {
            return Err(Error::Separation(why));
        }
    }
    Err(Error::Numerical(format!(
        "logistic regression did not converge in {MAX_ITER} Newton steps"
    )))
}
