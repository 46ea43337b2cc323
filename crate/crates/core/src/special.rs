//! Special functions needed by the Beta likelihood and the logistic link.

use crate::scalar::Real;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = T::lit(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(LANCZOS[0]);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += T::lit(c) / (x + T::of_usize(i));
    }
    let t = x + T::lit(LANCZOS_G) + half;
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

/// Digamma function ψ(x) = d/dx ln Γ(x) for `x > 0`.
pub fn digamma<T: Real>(mut x: T) -> T {
    let mut acc = T::zero();
    let ten = T::lit(10.0);
    while x < ten {
        acc -= T::one() / x;
        x += T::one();
    }
    let inv = T::one() / x;
    let inv2 = inv * inv;
    // asymptotic expansion with Bernoulli-number coefficients
    let series = inv2
        * (T::lit(1.0 / 12.0)
            - inv2
                * (T::lit(1.0 / 120.0)
                    - inv2
                        * (T::lit(1.0 / 252.0)
                            - inv2 * (T::lit(1.0 / 240.0) - inv2 * T::lit(1.0 / 132.0)))));
    acc + x.ln() - T::lit(0.5) * inv - series
}

/// Logistic function 1 / (1 + e^{-x}), evaluated without overflow.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// log(1 + e^x) without overflow.
#[inline]
pub fn log1p_exp<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_against_reference_implementation() {
        for &x in &[1e-6, 0.01, 0.3, 0.5, 1.0, 1.5, 2.0, 3.7, 10.0, 55.5, 300.0, 1e5] {
            let want = statrs::function::gamma::ln_gamma(x);
            let got = ln_gamma(x);
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "x={x}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn ln_gamma_integer_factorials() {
        assert!(ln_gamma(1.0f64).abs() < 1e-14);
        assert!(ln_gamma(2.0f64).abs() < 1e-14);
        assert!((ln_gamma(5.0f64) - 24f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn digamma_against_reference_implementation() {
        for &x in &[1e-4, 0.1, 0.5, 1.0, 2.5, 5.9, 6.0, 12.0, 250.0, 1e4] {
            let want = statrs::function::gamma::digamma(x);
            let got = digamma(x);
            assert!(
                (got - want).abs() <= 1e-11 * want.abs().max(1.0),
                "x={x}: {got} vs {want}"
            );
        }
        // ψ(1) = -γ
        assert!((digamma(1.0f64) + 0.577_215_664_901_532_9).abs() < 1e-13);
    }

    #[test]
    fn digamma_is_derivative_of_ln_gamma() {
        for &x in &[0.2f64, 1.3, 7.0, 40.0] {
            let h = 1e-5 * x.max(1.0);
            let fd = (ln_gamma(x + h) - ln_gamma(x - h)) / (2.0 * h);
            assert!((fd - digamma(x)).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn sigmoid_is_stable_and_symmetric() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(800.0f64) == 1.0 && sigmoid(-800.0f64) >= 0.0);
        for &x in &[-3.0f64, -0.5, 0.25, 4.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
            assert!((logit(sigmoid(x)) - x).abs() < 1e-12);
        }
        assert!((log1p_exp(1000.0f64) - 1000.0).abs() < 1e-12);
    }
}
