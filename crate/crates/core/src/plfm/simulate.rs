//! Forward simulation from the covariate-augmented factor model, used to
//! generate data with known parameters.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// Parameters and latent variables behind a simulated matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedFactors<T> {
    pub x: Array2<T>,
    pub z: Array2<T>,
    pub w: Array2<T>,
    pub a: Array2<T>,
    pub sigma2: T,
}

/// `x_i = W z_i + A f_i + ε_i` with `z_i ~ N(0, I)`, `ε_i ~ N(0, σ² I)`.
/// When `w` / `a` are `None`, entries are drawn from `N(0, 1)`.
pub fn simulate_factor_data<T: Real>(
    f: ArrayView2<'_, T>,
    d: usize,
    k: usize,
    w: Option<Array2<T>>,
    a: Option<Array2<T>>,
    sigma2: T,
    seed: u64,
) -> Result<SimulatedFactors<T>> {
    let n = f.nrows();
    let p = f.ncols();
    if !(sigma2 >= T::zero()) {
        return Err(Error::InvalidArgument("sigma2 must be non-negative".into()));
    }
    let mut r = rng::substream(seed, "plfm-simulate", 0);
    let mut normal = |rows: usize, cols: usize| {
        Array2::from_shape_simple_fn((rows, cols), || rng::std_normal::<T, _>(&mut r))
    };
    let w = w.unwrap_or_else(|| normal(d, k));
    let a = a.unwrap_or_else(|| normal(d, p));
    if w.dim() != (d, k) || a.dim() != (d, p) {
        return Err(Error::Shape("loading or coefficient matrix has the wrong shape".into()));
    }
    let z = normal(n, k);
    let noise = normal(n, d);
    let sd = sigma2.sqrt();
    let mut x = z.dot(&w.t());
    if p > 0 {
        x += &f.dot(&a.t());
    }
    x.zip_mut_with(&noise, |v, &e| *v += sd * e);
    Ok(SimulatedFactors { x, z, w, a, sigma2 })
}
