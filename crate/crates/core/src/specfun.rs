//! Special functions: Laguerre polynomials and their derivatives, digamma,
//! Pochhammer symbol, and the flow multiplier.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::{Error, Result};

/// `L_n(t)` by the three-term recurrence.
pub fn laguerre(n: i64, t: f64) -> Result<f64> {
    let n = check_degree(n)?;
    Ok(laguerre_pair(n, t).0)
}

/// `L'_n(t)` from `L'_0 = 0` and `L'_{k+1} = L'_k - L_k`.
pub fn laguerre_deriv(n: i64, t: f64) -> Result<f64> {
    let n = check_degree(n)?;
    Ok(laguerre_pair(n, t).1)
}

fn check_degree(n: i64) -> Result<usize> {
    usize::try_from(n).map_err(|_| Error::Domain(format!("Laguerre degree {n} < 0")))
}

/// `(L_n(t), L'_n(t))` in one pass.
pub(crate) fn laguerre_pair(n: usize, t: f64) -> (f64, f64) {
    let mut l_prev = 0.0;
    let mut l = 1.0;
    let mut dl = 0.0;
    for k in 0..n {
        dl -= l;
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - t) * l - kf * l_prev) / (kf + 1.0);
        l_prev = l;
        l = next;
    }
    (l, dl)
}

/// Digamma `Γ'/Γ(x)`; errors at the poles `x ∈ {0, -1, -2, …}`.
pub fn digamma(x: f64) -> Result<f64> {
    if x <= 0.0 && x == x.round() {
        return Err(Error::Pole(x));
    }
    Ok(digamma_raw(x))
}

const DIGAMMA_SHIFT: f64 = 8.0;

/// Digamma without the pole check (non-finite at poles).
pub(crate) fn digamma_raw(x: f64) -> f64 {
    if x < 0.0 {
        // ψ(x) = ψ(1 - x) - π cot(πx)
        return digamma_raw(1.0 - x) - pi_cot_pi(x);
    }
    let mut acc = 0.0;
    let mut y = x;
    while y < DIGAMMA_SHIFT {
        acc -= 1.0 / y;
        y += 1.0;
    }
    acc + digamma_asymptotic(y)
}

fn digamma_asymptotic(y: f64) -> f64 {
    let r = 1.0 / (y * y);
    // Bernoulli terms B_{2k} / (2k) through y^{-14}
    let series = r
        * (1.0 / 12.0
            - r * (1.0 / 120.0
                - r * (1.0 / 252.0
                    - r * (1.0 / 240.0
                        - r * (1.0 / 132.0 - r * (691.0 / 32760.0 - r / 12.0))))));
    y.ln() - 0.5 / y - series
}

/// `π·cot(πx)` with exact reduction to the principal period.
pub(crate) fn pi_cot_pi(x: f64) -> f64 {
    let r = x - x.round();
    let a = PI * r;
    PI * a.cos() / a.sin()
}

/// Rising factorial `a (a+1) ⋯ (a+k-1)`.
pub fn pochhammer(a: f64, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (a + j as f64))
}

/// Fourier multiplier of `S^u`: `exp(-2iu·atan(2λ))`.
pub fn multiplier_eval(u: f64, lambda: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * u * (2.0 * lambda).atan())
}

/// Unit-parameter multiplier in rational form, `(1 - 2iλ)/(1 + 2iλ)`.
pub fn jeulin_yor_multiplier(lambda: f64) -> Complex64 {
    Complex64::new(1.0, -2.0 * lambda) / Complex64::new(1.0, 2.0 * lambda)
}

/// Euler's gamma function.
pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}
