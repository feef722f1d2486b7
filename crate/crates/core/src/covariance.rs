//! Covariance of the two-parameter field `(u, t) ↦ S^u ω(t)`:
//!
//! ```text
//! E[S^u ω(s)·S^v ω(t)] = cov(t - s, u - v)
//! cov(Δt, Δu) = (2/π) ∫ e^{i(Δt·λ + 2Δu·atan 2λ)} / (1 + 4λ²) dλ
//!             = (2/π) ∫_0^{π/2} cos(Δt·tan(τ)/2 + 2Δu·τ) dτ.
//! ```
//!
//! The τ-form is integrated adaptively up to `τ_Λ = atan 2Λ`; the rest,
//! where `tan τ` blows up, is handled in λ by repeated integration by parts.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use num_complex::Complex64;

use crate::par;
use crate::paths::{fmt_f64, OuPath};
use crate::quad::adaptive_panels;
use crate::{Error, Result};

pub const DEFAULT_ABS_ERR: f64 = 1e-8;
pub const MIN_ABS_ERR: f64 = 1e-10;
const PANEL_BUDGET: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceQuery {
    /// `t - s`
    pub d_t: f64,
    /// `u - v`
    pub d_u: f64,
}

impl CovarianceQuery {
    pub fn new(d_t: f64, d_u: f64) -> Result<Self> {
        if !d_t.is_finite() || !d_u.is_finite() {
            return Err(Error::Domain(format!("non-finite covariance query ({d_t}, {d_u})")));
        }
        Ok(Self { d_t, d_u })
    }
}

/// `cov(Δt, Δu)` to absolute accuracy `abs_err`.
pub fn cov(q: CovarianceQuery, abs_err: f64) -> Result<f64> {
    if !(abs_err >= MIN_ABS_ERR) {
        return Err(Error::Domain(format!("abs_err {abs_err} below {MIN_ABS_ERR}")));
    }
    let CovarianceQuery { d_t, d_u } = q;
    let integrand = |tau: f64| (0.5 * d_t * tau.tan() + 2.0 * d_u * tau).cos();
    let scale = 2.0 / PI;
    if d_t == 0.0 {
        let est = adaptive_panels(&[0.0, FRAC_PI_2], abs_err / scale, PANEL_BUDGET, |t| (2.0 * d_u * t).cos())?;
        return Ok(scale * est.value);
    }
    let a = d_t.abs();
    let lambda_cut = (60.0 / a).max(5.0);
    let (tail, tail_err) = lambda_tail(d_t, d_u, lambda_cut)?;
    // one oscillation of Δt·λ per panel
    let period = 2.0 * PI / a;
    let panels = (lambda_cut / period).ceil() as usize;
    let mut breaks: Vec<f64> = (0..panels).map(|k| (2.0 * k as f64 * period).atan()).collect();
    breaks.push((2.0 * lambda_cut).atan());
    let budget = (abs_err - tail_err).max(0.25 * abs_err) / scale;
    let est = adaptive_panels(&breaks, budget, PANEL_BUDGET.max(4 * panels), integrand)?;
    Ok(scale * est.value + tail)
}

/// `(4/π)·Re ∫_Λ^∞ e^{iaλ} g(λ) dλ` with `g = (1+2iλ)^{Δu-1} (1-2iλ)^{-Δu-1}`,
/// from `-e^{iaΛ} Σ_k (-1)^k g^{(k)}(Λ)/(ia)^{k+1}`. Returns the value and
/// the size of the last retained term.
fn lambda_tail(a: f64, d_u: f64, lambda: f64) -> Result<(f64, f64)> {
    let alpha = d_u - 1.0;
    let beta = -d_u - 1.0;
    let p = Complex64::new(1.0, 2.0 * lambda);
    let q = Complex64::new(1.0, -2.0 * lambda);
    let two_i = Complex64::new(0.0, 2.0);
    let ia = Complex64::new(0.0, a);
    // f1^{(j)} = (2i)^j (α)_j↓ p^{α-j},  f2^{(j)} = (-2i)^j (β)_j↓ q^{β-j}
    let max_k = 60usize;
    let deriv = |base: Complex64, exp: f64, step: Complex64| -> Vec<Complex64> {
        let mut out = Vec::with_capacity(max_k + 1);
        let mut coef = Complex64::new(1.0, 0.0);
        for j in 0..=max_k {
            out.push(coef * base.powf(exp - j as f64));
            coef *= step * (exp - j as f64);
        }
        out
    };
    let d1 = deriv(p, alpha, two_i);
    let d2 = deriv(q, beta, -two_i);
    let mut binom = vec![1.0f64; max_k + 1];
    let mut sum = Complex64::new(0.0, 0.0);
    let mut ia_pow = ia;
    let mut last = f64::INFINITY;
    for k in 0..=max_k {
        if k > 0 {
            for j in (1..k).rev() {
                binom[j] += binom[j - 1];
            }
            binom[k] = 1.0;
        }
        let gk: Complex64 = (0..=k).map(|j| d1[j] * d2[k - j] * binom[j]).sum();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let term = gk * sign / ia_pow;
        sum += term;
        let size = term.norm() * 4.0 / PI;
        if size > last {
            break;
        }
        last = size;
        if size < 1e-16 {
            break;
        }
        ia_pow *= ia;
    }
    if last > 1e-11 {
        return Err(Error::Accuracy {
            what: format!("asymptotic tail of cov at Δt = {a}, Δu = {d_u}"),
            achieved: last,
            target: 1e-11,
        });
    }
    let value = -(Complex64::from_polar(1.0, a * lambda) * sum).re * 4.0 / PI;
    Ok((value, last))
}

/// Table of `cov` over a rectangular grid of differences.
#[derive(Debug, Clone)]
pub struct CovarianceTable {
    pub d_t: Vec<f64>,
    pub d_u: Vec<f64>,
    /// Row-major, `d_t` outer.
    pub values: Vec<f64>,
    pub abs_err_target: f64,
}

impl CovarianceTable {
    pub fn compute(d_t: &[f64], d_u: &[f64], abs_err: f64) -> Result<Self> {
        let cells: Vec<(f64, f64)> = d_t.iter().flat_map(|&a| d_u.iter().map(move |&b| (a, b))).collect();
        let values = par::map_slice(&cells, |&(a, b)| cov(CovarianceQuery::new(a, b)?, abs_err))
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            d_t: d_t.to_vec(),
            d_u: d_u.to_vec(),
            values,
            abs_err_target: abs_err,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d_u.len() + j]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "dt,du,cov")?;
        for (i, &a) in self.d_t.iter().enumerate() {
            for (j, &b) in self.d_u.iter().enumerate() {
                writeln!(out, "{},{},{}", fmt_f64(a), fmt_f64(b), fmt_f64(self.get(i, j)))?;
            }
        }
        Ok(())
    }
}

/// `min + k·step` for `k = 0..` up to `max` (inclusive, with slack for
/// rounding).
pub fn range_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(max >= min) || !min.is_finite() || !max.is_finite() {
        return Err(Error::Parameter(format!("invalid range {min}..{max} step {step}")));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|k| {
            let v = min + k as f64 * step;
            // snap values that should be exactly zero
            if v.abs() < 1e-12 * step { 0.0 } else { v }
        })
        .collect())
}

/// The bracket `|Δu| + |Δt|(1 + log(1 + 1/Δt²))`, with the Δt term 0 at Δt = 0.
pub fn continuity_modulus(d_t: f64, d_u: f64) -> f64 {
    let t = if d_t == 0.0 {
        0.0
    } else {
        d_t.abs() * (1.0 + (1.0 + 1.0 / (d_t * d_t)).ln())
    };
    d_u.abs() + t
}

/// `(1 - cov) - C·modulus`; negative means the bound holds here.
pub fn continuity_defect(d_t: f64, d_u: f64, c: f64) -> Result<f64> {
    if d_t == 0.0 && d_u == 0.0 {
        return Err(Error::Domain("continuity defect at the origin".into()));
    }
    let value = cov(CovarianceQuery::new(d_t, d_u)?, DEFAULT_ABS_ERR)?;
    Ok(1.0 - value - c * continuity_modulus(d_t, d_u))
}

/// Smallest `C` with `1 - cov ≤ C·modulus` over the grid (origin excluded).
pub fn continuity_constant(d_t: &[f64], d_u: &[f64]) -> Result<f64> {
    let table = CovarianceTable::compute(d_t, d_u, DEFAULT_ABS_ERR)?;
    let mut worst: f64 = 0.0;
    for (i, &a) in d_t.iter().enumerate() {
        for (j, &b) in d_u.iter().enumerate() {
            if a == 0.0 && b == 0.0 {
                continue;
            }
            worst = worst.max((1.0 - table.get(i, j)) / continuity_modulus(a, b));
        }
    }
    Ok(worst)
}

/// Sample mean and standard error of `x(s)·y(t)` over pairs `(x, y)`, with
/// both nodes required to lie in `central`.
pub fn empirical_cov(pairs: &[(OuPath, OuPath)], s: f64, t: f64, central: (f64, f64)) -> Result<(f64, f64)> {
    if pairs.len() < 100 {
        return Err(Error::Parameter(format!("{} path pairs, need at least 100", pairs.len())));
    }
    for x in [s, t] {
        if x < central.0 || x > central.1 {
            return Err(Error::Window(format!("node {x} outside central window {central:?}")));
        }
    }
    let products = pairs
        .iter()
        .map(|(x, y)| {
            let a = x.value_at(s).ok_or_else(|| Error::Window(format!("{s} is not a grid node")))?;
            let b = y.value_at(t).ok_or_else(|| Error::Window(format!("{t} is not a grid node")))?;
            Ok(a * b)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_std_err(&products))
}

/// Sample mean and its standard error.
pub fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
