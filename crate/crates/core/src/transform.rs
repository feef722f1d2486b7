//! The Jeulin-Yor transform in Wiener coordinates and its integer powers as
//! convolution kernels in OU coordinates.
//!
//! In OU coordinates `S = -F ∘ T ∘ F^{-1}` is convolution with
//! `μ = -δ₀ + e^{-t/2} 1_{t≥0} dt`, and
//! `μ^{*n} = (-1)^n (δ₀ + e^{-t/2} L'_n(t) 1_{t≥0} dt)` for `n ≥ 0`
//! (mirrored through `t ↦ -t` for `n < 0`).

use crate::par;
use crate::paths::{OuPath, WienerPath};
use crate::quad::GaussLegendre;
use crate::specfun::laguerre_pair;
use crate::{Error, Result};

/// Minimum convolution margin in time units.
pub const MIN_MARGIN: f64 = 40.0;

/// `θ(t) - ∫₀ᵗ θ(s)/s ds` by the composite trapezoid rule on θ's nodes.
///
/// Below the first node `θ(s)/s` is held at `θ(x₀)/x₀` (linear extension of
/// θ through the origin).
pub fn jeulin_yor_wiener(theta: &WienerPath) -> WienerPath {
    let xs = theta.xs();
    let vs = theta.values();
    let mut integral = vs[0];
    let mut out = Vec::with_capacity(xs.len());
    out.push(vs[0] - integral);
    for j in 1..xs.len() {
        integral += 0.5 * (xs[j] - xs[j - 1]) * (vs[j - 1] / xs[j - 1] + vs[j] / xs[j]);
        out.push(vs[j] - integral);
    }
    WienerPath::new(xs.to_vec(), out).expect("same nodes as a valid path")
}

/// Side of the real line carrying a kernel's density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    NonNeg,
    NonPos,
}

/// `atom·δ₀ + density` with the density carried on one half-line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedKernelMeasure {
    power: i64,
    atom: f64,
    support: Support,
}

impl SignedKernelMeasure {
    pub fn atom(&self) -> f64 {
        self.atom
    }

    pub fn support(&self) -> Support {
        self.support
    }

    /// The integer `n` with this kernel equal to `μ^{*n}`.
    pub fn power(&self) -> i64 {
        self.power
    }

    /// Density at `x`; zero off the support.
    pub fn density(&self, x: f64) -> f64 {
        let r = match self.support {
            Support::NonNeg if x >= 0.0 => x,
            Support::NonPos if x <= 0.0 => -x,
            _ => return 0.0,
        };
        self.density_on_support(r)
    }

    /// Density at distance `r ≥ 0` from the origin, inside the support.
    fn density_on_support(&self, r: f64) -> f64 {
        let n = self.power.unsigned_abs() as usize;
        if n == 0 {
            return 0.0;
        }
        let (_, dl) = laguerre_pair(n, r);
        self.atom * (-0.5 * r).exp() * dl
    }

    /// Bound on `∫_{|x|>m} |density|`.
    pub fn tail_bound(&self, m: f64) -> f64 {
        if self.power == 0 {
            return 0.0;
        }
        let gl = GaussLegendre::new(24);
        // density ≤ e^{-r/2}·poly(r); integrate |density| over [m, m + 400]
        // in unit panels, past which e^{-200} underflows every polynomial
        // factor of moderate degree.
        (0..400)
            .map(|k| {
                let a = m + k as f64;
                gl.integrate(a, a + 1.0, |r| self.density_on_support(r).abs())
            })
            .sum()
    }
}

/// `μ^{*n}` for integer `n`.
pub fn integer_kernel(n: i64) -> SignedKernelMeasure {
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    SignedKernelMeasure {
        power: n,
        atom: sign,
        support: if n >= 0 { Support::NonNeg } else { Support::NonPos },
    }
}

/// Truncation settings for time-domain convolutions.
#[derive(Debug, Clone, Copy)]
pub struct ConvolutionOptions {
    /// Target for the analytic truncation-tail bound (absolute).
    pub tail_tolerance: f64,
    /// Refuse margins larger than this many time units.
    pub max_margin: f64,
}

impl Default for ConvolutionOptions {
    fn default() -> Self {
        Self {
            tail_tolerance: 1e-10,
            max_margin: 400.0,
        }
    }
}

/// A convolution result restricted to the nodes where the truncated kernel
/// fits inside the input window.
#[derive(Debug, Clone)]
pub struct Convolved {
    pub path: OuPath,
    /// Kernel truncation radius in time units.
    pub margin: f64,
    /// Upper bound on the neglected tail contribution.
    pub tail_bound: f64,
}

/// Composite trapezoid weights with fourth-order end corrections at the
/// origin (17/48, 59/48, 43/48, 49/48, 1, …); the far end carries 1/2.
pub(crate) fn end_corrected_weights(k: usize) -> Vec<f64> {
    let mut w = vec![1.0; k + 1];
    const HEAD: [f64; 4] = [17.0 / 48.0, 59.0 / 48.0, 43.0 / 48.0, 49.0 / 48.0];
    for (j, h) in HEAD.iter().enumerate().take(k + 1) {
        w[j] = *h;
    }
    w[k] = 0.5;
    w
}

/// `atom·ω + density * ω` on the valid sub-window.
pub fn apply_signed_kernel(
    w: &OuPath,
    k: &SignedKernelMeasure,
    opts: ConvolutionOptions,
) -> Result<Convolved> {
    if k.power == 0 {
        return Ok(Convolved {
            path: w.clone(),
            margin: 0.0,
            tail_bound: 0.0,
        });
    }
    let dt = w.grid().dt();
    let sup = w.sup_abs().max(f64::MIN_POSITIVE);
    let mut margin = MIN_MARGIN.max(2.0 * (sup / opts.tail_tolerance).ln());
    let mut tail = k.tail_bound(margin) * sup;
    while tail > opts.tail_tolerance {
        margin += 5.0;
        if margin > opts.max_margin {
            return Err(Error::Margin {
                needed: margin,
                available: opts.max_margin,
            });
        }
        tail = k.tail_bound(margin) * sup;
    }
    let taps = (margin / dt).ceil() as usize;
    let margin = taps as f64 * dt;
    let n = w.grid().len();
    let available = (n - 1) as f64 * dt;
    if n < taps + 2 {
        return Err(Error::Margin {
            needed: margin,
            available,
        });
    }
    let weights = end_corrected_weights(taps);
    let kernel: Vec<f64> = weights
        .iter()
        .enumerate()
        .map(|(j, c)| c * dt * k.density_on_support(j as f64 * dt))
        .collect();
    let v = w.values();
    let atom = k.atom;
    let (lo, hi) = match k.support {
        Support::NonNeg => (taps, n),
        Support::NonPos => (0, n - taps),
    };
    let support = k.support;
    let values = par::map_range(hi - lo, |i| {
        let i = i + lo;
        let conv: f64 = match support {
            Support::NonNeg => kernel.iter().enumerate().map(|(j, c)| c * v[i - j]).sum(),
            Support::NonPos => kernel.iter().enumerate().map(|(j, c)| c * v[i + j]).sum(),
        };
        atom * v[i] + conv
    });
    let grid = w.grid().slice(lo, hi)?;
    Ok(Convolved {
        path: OuPath::new(grid, values)?,
        margin,
        tail_bound: tail,
    })
}

/// `S(ω)(t) = -ω(t) + ∫₀^∞ e^{-s/2} ω(t-s) ds`.
pub fn s_time_domain(w: &OuPath, opts: ConvolutionOptions) -> Result<Convolved> {
    apply_signed_kernel(w, &integer_kernel(1), opts)
}
