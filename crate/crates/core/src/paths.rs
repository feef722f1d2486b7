//! Path containers in the two coordinate systems and the maps between them.
//!
//! Ornstein-Uhlenbeck coordinates use [`OuPath`] on a uniform [`TimeGrid`];
//! Wiener coordinates use [`WienerPath`] on an increasing positive grid with
//! the implicit value `θ(0) = 0`. The conjugation `F(g)(t) = e^{-t/2} g(e^t)`
//! sends a geometric Wiener grid to a uniform OU grid node by node.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::{Error, Result};

/// Uniform lattice `t_start + j·dt`, `0 ≤ j < n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    dt: f64,
    n: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, dt: f64, n: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !t_start.is_finite() {
            return Err(Error::Domain(format!("grid step {dt} / start {t_start}")));
        }
        if n < 2 {
            return Err(Error::Domain(format!("grid needs at least 2 nodes, got {n}")));
        }
        Ok(Self { t_start, dt, n })
    }

    /// Grid covering `[t_min, t_max]` with step `dt` (t_max rounded to a node).
    pub fn spanning(t_min: f64, t_max: f64, dt: f64) -> Result<Self> {
        let n = ((t_max - t_min) / dt).round() as usize + 1;
        Self::new(t_min, dt, n)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n - 1)
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t_start + j as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|j| self.time(j))
    }

    /// Index of the node at time `t`, if `t` lies on the grid (to 1e-9 steps).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_start) / self.dt;
        let j = x.round();
        if (x - j).abs() < 1e-9 && j >= 0.0 && (j as usize) < self.n {
            Some(j as usize)
        } else {
            None
        }
    }

    /// Sub-grid of nodes `[lo, hi)`.
    pub fn slice(&self, lo: usize, hi: usize) -> Result<Self> {
        if hi > self.n || hi < lo + 2 {
            return Err(Error::Window(format!(
                "slice [{lo}, {hi}) of a {}-node grid",
                self.n
            )));
        }
        Self::new(self.time(lo), self.dt, hi - lo)
    }

    /// Node offset of `other` relative to `self` when both share the lattice.
    pub fn offset_of(&self, other: &TimeGrid) -> Option<i64> {
        if ((self.dt - other.dt) / self.dt).abs() > 1e-12 {
            return None;
        }
        let x = (other.t_start - self.t_start) / self.dt;
        let k = x.round();
        ((x - k).abs() < 1e-6).then_some(k as i64)
    }
}

/// Sampled Ornstein-Uhlenbeck-coordinate path `ω` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OuPath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl OuPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Domain(format!(
                "{} values for a {}-node grid",
                values.len(),
                grid.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at node {j}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.times().map(f).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value_at(&self, t: f64) -> Option<f64> {
        self.grid.index_of(t).map(|j| self.values[j])
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Restriction to nodes `[lo, hi)`.
    pub fn slice(&self, lo: usize, hi: usize) -> Result<Self> {
        let grid = self.grid.slice(lo, hi)?;
        Ok(Self {
            grid,
            values: self.values[lo..hi].to_vec(),
        })
    }

    /// Restriction to the nodes inside `[t_min, t_max]`.
    pub fn window(&self, t_min: f64, t_max: f64) -> Result<Self> {
        let lo = ((t_min - self.grid.t_start) / self.grid.dt - 1e-9).ceil().max(0.0) as usize;
        let hi_f = ((t_max - self.grid.t_start) / self.grid.dt + 1e-9).floor();
        if hi_f < 0.0 {
            return Err(Error::Window(format!("[{t_min}, {t_max}] outside the path")));
        }
        let hi = (hi_f as usize + 1).min(self.grid.len());
        self.slice(lo, hi)
    }

    /// Linear interpolation at an arbitrary `t` inside the grid span.
    pub fn interpolate(&self, t: f64) -> Result<f64> {
        linear_interp_uniform(&self.grid, &self.values, t)
    }
}

fn linear_interp_uniform(grid: &TimeGrid, values: &[f64], t: f64) -> Result<f64> {
    let x = (t - grid.t_start) / grid.dt;
    let last = (grid.n - 1) as f64;
    if !(-1e-9..=last + 1e-9).contains(&x) {
        return Err(Error::Domain(format!(
            "t = {t} outside [{}, {}]",
            grid.t_start,
            grid.t_end()
        )));
    }
    let x = x.clamp(0.0, last);
    let j = (x.floor() as usize).min(grid.n - 2);
    let w = x - j as f64;
    Ok(values[j] * (1.0 - w) + values[j + 1] * w)
}

/// Sampled Wiener-coordinate path `θ` on `0 < x_0 < x_1 < …`, `θ(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    xs: Vec<f64>,
    values: Vec<f64>,
}

impl WienerPath {
    pub fn new(xs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.len() != values.len() || xs.len() < 2 {
            return Err(Error::Domain(format!(
                "{} nodes, {} values",
                xs.len(),
                values.len()
            )));
        }
        if !(xs[0] > 0.0) {
            return Err(Error::Domain(format!("first node {} must be > 0", xs[0])));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("nodes must be strictly increasing".into()));
        }
        if values.iter().chain(&xs).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite node or value".into()));
        }
        Ok(Self { xs, values })
    }

    pub fn from_fn(xs: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = xs.iter().map(|&x| f(x)).collect();
        Self::new(xs, values)
    }

    /// Nodes `e^{t_j}` of a uniform OU grid.
    pub fn geometric_nodes(grid: &TimeGrid) -> Vec<f64> {
        grid.times().map(f64::exp).collect()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation; between 0 and the first node uses `θ(0) = 0`.
    pub fn interpolate(&self, x: f64) -> Result<f64> {
        let last = *self.xs.last().expect("non-empty");
        if !(0.0..=last * (1.0 + 1e-12)).contains(&x) {
            return Err(Error::Domain(format!("x = {x} outside (0, {last}]")));
        }
        let j = self.xs.partition_point(|&v| v < x);
        if j < self.xs.len() && self.xs[j] == x {
            return Ok(self.values[j]);
        }
        if j == 0 {
            return Ok(self.values[0] * x / self.xs[0]);
        }
        let j = j.min(self.xs.len() - 1);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let w = (x - x0) / (x1 - x0);
        Ok(self.values[j - 1] * (1.0 - w) + self.values[j] * w)
    }

    /// If the nodes are `e^{t_start + j·dt}`, the uniform grid of exponents.
    pub fn log_grid(&self) -> Option<TimeGrid> {
        let t0 = self.xs[0].ln();
        let dt = (self.xs[self.xs.len() - 1].ln() - t0) / (self.xs.len() - 1) as f64;
        let grid = TimeGrid::new(t0, dt, self.xs.len()).ok()?;
        let uniform = self
            .xs
            .iter()
            .enumerate()
            .all(|(j, x)| (x.ln() - grid.time(j)).abs() <= 1e-9 * (1.0 + grid.time(j).abs()));
        uniform.then_some(grid)
    }
}

/// `F(g)(t) = e^{-t/2} g(e^t)`, on the OU grid whose image is `g`'s nodes.
///
/// Requires geometric nodes; values are exact at nodes up to rounding.
pub fn f_forward(g: &WienerPath) -> Result<OuPath> {
    let grid = g
        .log_grid()
        .ok_or_else(|| Error::Domain("Wiener nodes are not geometric; use f_forward_on".into()))?;
    let values = g
        .xs
        .iter()
        .zip(&g.values)
        .map(|(&x, &v)| v / x.sqrt())
        .collect();
    OuPath::new(grid, values)
}

/// `F(g)` on an arbitrary OU grid, interpolating `g` linearly between nodes.
pub fn f_forward_on(g: &WienerPath, grid: TimeGrid) -> Result<OuPath> {
    let last = *g.xs.last().expect("non-empty");
    let (lo, hi) = (grid.t_start().exp(), grid.t_end().exp());
    if lo < g.xs[0] * (1.0 - 1e-12) || hi > last * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "OU grid maps to [{lo}, {hi}], outside [{}, {last}]",
            g.xs[0]
        )));
    }
    let values = grid
        .times()
        .map(|t| {
            let x = t.exp();
            g.interpolate(x.clamp(g.xs[0], last)).map(|v| v / x.sqrt())
        })
        .collect::<Result<Vec<_>>>()?;
    OuPath::new(grid, values)
}

/// `F^{-1}(ω)(x) = √x·ω(log x)` on the geometric nodes `e^{t_j}`.
pub fn f_inverse(w: &OuPath) -> WienerPath {
    let xs = WienerPath::geometric_nodes(&w.grid);
    let values = xs
        .iter()
        .zip(&w.values)
        .map(|(&x, &v)| v * x.sqrt())
        .collect();
    WienerPath { xs, values }
}

/// `F^{-1}(ω)` at arbitrary positive nodes, interpolating `ω` linearly.
pub fn f_inverse_at(w: &OuPath, xs: &[f64]) -> Result<WienerPath> {
    if let Some(x) = xs.iter().find(|&&x| x <= 0.0) {
        return Err(Error::Domain(format!("node {x} must be positive")));
    }
    let values = xs
        .iter()
        .map(|&x| w.interpolate(x.ln()).map(|v| v * x.sqrt()))
        .collect::<Result<Vec<_>>>()?;
    WienerPath::new(xs.to_vec(), values)
}

/// Brownian scaling `α^{-1/2} θ(α t)`, carried on the rescaled nodes `x/α`.
pub fn scale(theta: &WienerPath, alpha: f64) -> Result<WienerPath> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("scaling factor {alpha} must be > 0")));
    }
    let c = alpha.sqrt().recip();
    let xs = theta.xs.iter().map(|x| x / alpha).collect();
    let values = theta.values.iter().map(|v| v * c).collect();
    WienerPath::new(xs, values)
}

/// `τ_s ω(t) = ω(s + t)`: values unchanged, grid shifted by `-s`.
pub fn translate(w: &OuPath, s: f64) -> OuPath {
    let grid = TimeGrid {
        t_start: w.grid.t_start - s,
        ..w.grid
    };
    OuPath {
        grid,
        values: w.values.clone(),
    }
}

/// Time-domain H^U norm `√∫(h²/4 + ḣ²)` by the trapezoid rule with central
/// differences (one-sided at the ends).
pub fn hu_norm(w: &OuPath) -> Result<f64> {
    let n = w.grid.len();
    if n < 3 {
        return Err(Error::Domain(format!("H^U norm needs 3 nodes, got {n}")));
    }
    let dt = w.grid.dt();
    let v = &w.values;
    let deriv = |j: usize| -> f64 {
        if j == 0 {
            (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt)
        } else if j == n - 1 {
            (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dt)
        } else {
            (v[j + 1] - v[j - 1]) / (2.0 * dt)
        }
    };
    let integrand = |j: usize| 0.25 * v[j] * v[j] + deriv(j).powi(2);
    let inner: f64 = (1..n - 1).map(integrand).sum();
    let total = dt * (inner + 0.5 * (integrand(0) + integrand(n - 1)));
    Ok(total.sqrt())
}

/// Spectral H^U norm `√((1/8π)∫|ĥ|²(1+4λ²)dλ)` of the periodized samples.
pub fn hu_norm_spectral(w: &OuPath) -> f64 {
    let spectrum = dft(w.values());
    hu_norm_from_spectrum(&spectrum, w.grid.dt()).sqrt()
}

/// `(1/8π) Σ_k |ĥ_k|²(1+4λ_k²) Δλ` with `ĥ_k = dt·DFT_k`.
pub(crate) fn hu_norm_from_spectrum(spectrum: &[Complex64], dt: f64) -> f64 {
    let n = spectrum.len();
    let dlambda = 2.0 * std::f64::consts::PI / (n as f64 * dt);
    let s: f64 = spectrum
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let l = angular_frequency(k, n, dt);
            (c * dt).norm_sqr() * (1.0 + 4.0 * l * l)
        })
        .sum();
    s * dlambda / (8.0 * std::f64::consts::PI)
}

/// Angular frequency of DFT bin `k` for `n` samples at spacing `dt`;
/// the Nyquist bin is reported as positive.
pub(crate) fn angular_frequency(k: usize, n: usize, dt: f64) -> f64 {
    let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    2.0 * std::f64::consts::PI * kk / (n as f64 * dt)
}

pub(crate) fn dft(values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Discrete `sup_t |ω(t)| / log(e + |t|)`.
pub fn u_norm(w: &OuPath) -> f64 {
    w.grid
        .times()
        .zip(&w.values)
        .map(|(t, v)| v.abs() / (std::f64::consts::E + t.abs()).ln())
        .fold(0.0, f64::max)
}

/// Discrete `sup_x |θ(x)| / (√x · log(e + |log x|))`.
pub fn theta_norm(p: &WienerPath) -> f64 {
    p.xs
        .iter()
        .zip(&p.values)
        .map(|(&x, v)| v.abs() / (x.sqrt() * (std::f64::consts::E + x.ln().abs()).ln()))
        .fold(0.0, f64::max)
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `t,value` (or the given header) rows.
pub fn write_csv_columns<W: Write>(mut out: W, header: &str, a: &[f64], b: &[f64]) -> Result<()> {
    let mut s = String::with_capacity(40 * a.len() + header.len() + 1);
    s.push_str(header);
    s.push('\n');
    for (x, y) in a.iter().zip(b) {
        let _ = writeln!(s, "{},{}", fmt_f64(*x), fmt_f64(*y));
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

impl OuPath {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let ts: Vec<f64> = self.grid.times().collect();
        write_csv_columns(out, "t,value", &ts, &self.values)
    }

    /// Reads `t,value` rows; the `t` column must be uniformly spaced.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let (ts, vs) = read_two_columns(input, "t")?;
        if ts.len() < 2 {
            return Err(Error::Parse("need at least two rows".into()));
        }
        let dt = (ts[ts.len() - 1] - ts[0]) / (ts.len() - 1) as f64;
        let grid = TimeGrid::new(ts[0], dt, ts.len())?;
        for (j, t) in ts.iter().enumerate() {
            if (t - grid.time(j)).abs() > 1e-9 * dt.max(1.0) * (1.0 + t.abs()) {
                return Err(Error::Parse(format!("non-uniform time column at row {j}")));
            }
        }
        Self::new(grid, vs)
    }
}

impl WienerPath {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv_columns(out, "x,value", &self.xs, &self.values)
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let (xs, vs) = read_two_columns(input, "x")?;
        Self::new(xs, vs)
    }
}

fn read_two_columns<R: BufRead>(input: R, first: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))??;
    let expected = format!("{first},value");
    if header.trim() != expected {
        return Err(Error::Parse(format!(
            "header {:?}, expected {expected:?}",
            header.trim()
        )));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut next = || -> Result<f64> {
            parts
                .next()
                .ok_or_else(|| Error::Parse(format!("row {}: missing column", i + 1)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))
        };
        a.push(next()?);
        b.push(next()?);
    }
    Ok((a, b))
}
