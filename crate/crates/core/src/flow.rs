//! Spectral realization of `S^u`: multiply the transform of the path by
//! `e^{-2iu·atan(2λ)}`.
//!
//! Two boundary models are offered. [`Boundary::Padded`] embeds the window in
//! a power-of-two buffer at least four times longer, fills the pads with the
//! edge values tapered to zero by a raised cosine, and trusts only a central
//! window of the output. [`Boundary::Circular`] treats the samples as one
//! period of a periodic path; it is exact for periodic inputs and commutes
//! with cyclic shifts.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::par;
use crate::paths::{angular_frequency, OuPath, TimeGrid};
use crate::specfun::multiplier_eval;
use crate::{Error, Result};

/// Steps between exact restarts in [`PreparedPath::iterate_at`].
pub const ITERATE_CHUNK: usize = 64;

/// Tolerated imaginary residue relative to the signal's sup norm.
pub const IMAG_RESIDUE_LIMIT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Padded,
    Circular,
}

/// Discretization of `S^u` for one grid.
#[derive(Clone)]
pub struct FlowPlan {
    grid: TimeGrid,
    pad_left: usize,
    pad_right: usize,
    taper_width: usize,
    boundary: Boundary,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for FlowPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowPlan")
            .field("grid", &self.grid)
            .field("pad_left", &self.pad_left)
            .field("pad_right", &self.pad_right)
            .field("taper_width", &self.taper_width)
            .field("boundary", &self.boundary)
            .finish()
    }
}

impl FlowPlan {
    /// Padded plan: length `2^k ≥ 4n`, pads split evenly, taper across the
    /// whole shorter pad.
    pub fn new(grid: TimeGrid) -> Result<Self> {
        let total = (4 * grid.len()).next_power_of_two();
        let pad = total - grid.len();
        let pad_left = pad / 2;
        Self::padded(grid, pad_left, pad - pad_left, pad_left.min(pad - pad_left))
    }

    /// Padded plan with an explicit layout.
    pub fn padded(grid: TimeGrid, pad_left: usize, pad_right: usize, taper_width: usize) -> Result<Self> {
        let total = grid.len() + pad_left + pad_right;
        if !total.is_power_of_two() || total < 4 * grid.len() {
            return Err(Error::Parameter(format!(
                "padded length {total} must be a power of two ≥ 4·{}",
                grid.len()
            )));
        }
        if taper_width < 8 || taper_width > pad_left.min(pad_right) {
            return Err(Error::Parameter(format!(
                "taper width {taper_width} outside [8, {}]",
                pad_left.min(pad_right)
            )));
        }
        Ok(Self::build(grid, pad_left, pad_right, taper_width, Boundary::Padded))
    }

    /// Periodic plan on exactly the grid's samples.
    pub fn circular(grid: TimeGrid) -> Self {
        Self::build(grid, 0, 0, 0, Boundary::Circular)
    }

    fn build(grid: TimeGrid, pad_left: usize, pad_right: usize, taper_width: usize, boundary: Boundary) -> Self {
        let total = grid.len() + pad_left + pad_right;
        let mut planner = FftPlanner::new();
        Self {
            grid,
            pad_left,
            pad_right,
            taper_width,
            boundary,
            forward: planner.plan_fft_forward(total),
            inverse: planner.plan_fft_inverse(total),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn pad_left(&self) -> usize {
        self.pad_left
    }

    pub fn pad_right(&self) -> usize {
        self.pad_right
    }

    pub fn taper_width(&self) -> usize {
        self.taper_width
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn padded_len(&self) -> usize {
        self.grid.len() + self.pad_left + self.pad_right
    }

    /// Middle `fraction` of the grid as an index range.
    pub fn central_range(&self, fraction: f64) -> Range<usize> {
        central_range(self.grid.len(), fraction)
    }

    /// Time interval of [`Self::central_range`].
    pub fn central_window(&self, fraction: f64) -> (f64, f64) {
        let r = self.central_range(fraction);
        (self.grid.time(r.start), self.grid.time(r.end - 1))
    }

    fn check_grid(&self, w: &OuPath) -> Result<()> {
        if *w.grid() != self.grid {
            return Err(Error::Parameter(format!(
                "path grid {:?} differs from plan grid {:?}",
                w.grid(),
                self.grid
            )));
        }
        Ok(())
    }

    /// Pads and tapers the samples into the transform buffer.
    fn embed(&self, values: &[f64]) -> Vec<Complex64> {
        let n = values.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.padded_len()];
        for (j, &v) in values.iter().enumerate() {
            buf[self.pad_left + j].re = v;
        }
        let taper = |d: usize| -> f64 {
            if d > self.taper_width {
                0.0
            } else {
                0.5 * (1.0 + (PI * d as f64 / (self.taper_width + 1) as f64).cos())
            }
        };
        for d in 1..=self.pad_left {
            buf[self.pad_left - d].re = values[0] * taper(d);
        }
        for d in 1..=self.pad_right {
            buf[self.pad_left + n - 1 + d].re = values[n - 1] * taper(d);
        }
        buf
    }

    /// Transform of the embedded path.
    pub fn prepare(&self, w: &OuPath) -> Result<PreparedPath> {
        self.check_grid(w)?;
        let mut spectrum = self.embed(w.values());
        self.forward.process(&mut spectrum);
        Ok(PreparedPath {
            plan: self.clone(),
            spectrum,
            sup: w.sup_abs(),
        })
    }

    /// Multiplier at each bin; the Nyquist bin keeps only its real part so
    /// the product stays Hermitian.
    pub fn multipliers(&self, u: f64) -> Vec<Complex64> {
        (0..self.padded_len()).map(|k| self.multipliers_at(k, u)).collect()
    }

    fn multipliers_at(&self, k: usize, u: f64) -> Complex64 {
        let n = self.padded_len();
        let m = multiplier_eval(u, angular_frequency(k, n, self.grid.dt()));
        if n % 2 == 0 && k == n / 2 {
            Complex64::new(m.re, 0.0)
        } else {
            m
        }
    }
}

fn central_range(n: usize, fraction: f64) -> Range<usize> {
    let keep = ((n as f64 * fraction.clamp(0.0, 1.0)).round() as usize).clamp(1, n);
    let lo = (n - keep) / 2;
    lo..lo + keep
}

/// A path already moved to the frequency domain; `S^u` for many `u` costs
/// one inverse transform each.
#[derive(Debug, Clone)]
pub struct PreparedPath {
    plan: FlowPlan,
    spectrum: Vec<Complex64>,
    sup: f64,
}

impl PreparedPath {
    pub fn plan(&self) -> &FlowPlan {
        &self.plan
    }

    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    pub fn apply(&self, u: f64) -> Result<OuPath> {
        self.apply_multipliers(&self.plan.multipliers(u))
    }

    /// As [`PreparedPath::apply`] with multipliers from
    /// [`FlowPlan::multipliers`], for reuse across paths.
    pub fn apply_multipliers(&self, m: &[Complex64]) -> Result<OuPath> {
        if m.len() != self.spectrum.len() {
            return Err(Error::Parameter(format!(
                "{} multipliers for {} bins",
                m.len(),
                self.spectrum.len()
            )));
        }
        let mut buf: Vec<Complex64> = self.spectrum.iter().zip(m).map(|(s, m)| s * m).collect();
        self.plan.inverse.process(&mut buf);
        let scale = 1.0 / buf.len() as f64;
        let lo = self.plan.pad_left;
        let n = self.plan.grid.len();
        let residue = buf[lo..lo + n].iter().map(|c| c.im.abs()).fold(0.0, f64::max) * scale;
        let limit = IMAG_RESIDUE_LIMIT * self.sup.max(f64::MIN_POSITIVE);
        if residue > limit {
            return Err(Error::SpectralSymmetry { residue, limit });
        }
        let values = buf[lo..lo + n].iter().map(|c| c.re * scale).collect();
        OuPath::new(self.plan.grid, values)
    }

    /// `(S^u ω)` at grid node `j` without a full inverse transform.
    pub fn value_at(&self, j: usize, u: f64) -> f64 {
        let n = self.spectrum.len();
        let pos = (self.plan.pad_left + j) as f64;
        let mut acc = 0.0;
        for (k, s) in self.spectrum.iter().enumerate() {
            let m = self.plan.multipliers_at(k, u);
            let phase = 2.0 * PI * (k as f64) * pos / n as f64;
            acc += (s * m * Complex64::from_polar(1.0, phase)).re;
        }
        acc / n as f64
    }

    /// `(S^{mu} ω)` at the given grid nodes for `m = 0..count`, as
    /// `values[m][i]`.
    ///
    /// Uses `m_{(m+1)u} = m_{mu}·m_u` bin by bin, restarting from the exact
    /// multiplier every [`ITERATE_CHUNK`] steps, and a direct sum per node
    /// instead of an inverse transform.
    pub fn iterate_at(&self, nodes: &[usize], u: f64, count: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.spectrum.len();
        if let Some(&j) = nodes.iter().find(|&&j| j >= self.plan.grid.len()) {
            return Err(Error::Window(format!("node {j} is outside the grid")));
        }
        // spectrum twisted to each node: s_k·e^{2πik·pos/n}/n
        let twisted: Vec<Vec<Complex64>> = nodes
            .iter()
            .map(|&j| {
                let pos = (self.plan.pad_left + j) as f64;
                self.spectrum
                    .iter()
                    .enumerate()
                    .map(|(k, s)| s * Complex64::from_polar(1.0 / n as f64, 2.0 * PI * k as f64 * pos / n as f64))
                    .collect()
            })
            .collect();
        let step = self.plan.multipliers(u);
        let nyquist = (n % 2 == 0).then_some(n / 2);
        let chunks = count.div_ceil(ITERATE_CHUNK);
        let out = par::map_range(chunks, |c| {
            let m0 = c * ITERATE_CHUNK;
            let m1 = (m0 + ITERATE_CHUNK).min(count);
            let mut cur = self.plan.multipliers(m0 as f64 * u);
            let mut rows = Vec::with_capacity(m1 - m0);
            for m in m0..m1 {
                if let Some(k) = nyquist {
                    cur[k] = self.plan.multipliers_at(k, m as f64 * u);
                }
                rows.push(
                    twisted
                        .iter()
                        .map(|tw| tw.iter().zip(&cur).map(|(a, b)| (a * b).re).sum::<f64>())
                        .collect::<Vec<f64>>(),
                );
                for (c, s) in cur.iter_mut().zip(&step) {
                    *c *= s;
                }
            }
            rows
        });
        Ok(out.into_iter().flatten().collect())
    }
}

/// `S^u ω` on the plan's grid.
pub fn apply_flow(w: &OuPath, u: f64, plan: &FlowPlan) -> Result<OuPath> {
    plan.prepare(w)?.apply(u)
}

/// [`apply_flow`] over many paths in parallel.
pub fn apply_flow_batch(paths: &[OuPath], u: f64, plan: &FlowPlan) -> Result<Vec<OuPath>> {
    par::map_slice(paths, |w| apply_flow(w, u, plan)).into_iter().collect()
}

/// Max difference on the central half window between `S^v S^u ω` and
/// `S^{u+v} ω`.
pub fn group_law_defect(w: &OuPath, u: f64, v: f64, plan: &FlowPlan) -> Result<f64> {
    let composed = apply_flow(&apply_flow(w, u, plan)?, v, plan)?;
    let direct = apply_flow(w, u + v, plan)?;
    let r = plan.central_range(0.5);
    Ok(composed.values()[r.clone()]
        .iter()
        .zip(&direct.values()[r])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// `(g, S^u h)_{H^U}` for each `u`, as `(1/8π)Σ conj(ĝ)ĥ m_u (1+4λ²) Δλ`.
pub fn inner_product_decay(g: &OuPath, h: &OuPath, us: &[f64], plan: &FlowPlan) -> Result<Vec<Complex64>> {
    let gs = plan.prepare(g)?;
    let hs = plan.prepare(h)?;
    let n = plan.padded_len();
    let dt = plan.grid.dt();
    let dlambda = 2.0 * PI / (n as f64 * dt);
    let weights: Vec<Complex64> = gs
        .spectrum
        .iter()
        .zip(&hs.spectrum)
        .enumerate()
        .map(|(k, (a, b))| {
            let l = angular_frequency(k, n, dt);
            a.conj() * b * (dt * dt) * (1.0 + 4.0 * l * l)
        })
        .collect();
    Ok(par::map_slice(us, |&u| {
        let m = plan.multipliers(u);
        weights.iter().zip(&m).map(|(w, m)| w * m).sum::<Complex64>() * (dlambda / (8.0 * PI))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{hu_norm_spectral, translate};
    use crate::transform::{apply_signed_kernel, integer_kernel, s_time_domain, ConvolutionOptions};
    use proptest::prelude::*;

    fn bump(t: f64) -> f64 {
        (-t * t / 8.0).exp() * (1.0 + 0.3 * (0.8 * t).sin())
    }

    fn bump_path() -> OuPath {
        OuPath::from_fn(TimeGrid::spanning(-100.0, 100.0, 1.0 / 32.0).unwrap(), bump).unwrap()
    }

    fn diff_on_common(a: &OuPath, b: &OuPath, t_min: f64, t_max: f64) -> f64 {
        let off = a.grid().offset_of(b.grid()).expect("shared lattice");
        let mut worst: f64 = 0.0;
        for (j, t) in a.grid().times().enumerate() {
            let jb = j as i64 - off;
            if t >= t_min && t <= t_max && jb >= 0 && (jb as usize) < b.values().len() {
                worst = worst.max((a.values()[j] - b.values()[jb as usize]).abs());
            }
        }
        worst
    }

    #[test]
    fn plan_layout() {
        let grid = TimeGrid::new(0.0, 0.1, 1000).unwrap();
        let plan = FlowPlan::new(grid).unwrap();
        assert_eq!(plan.padded_len(), 4096);
        assert!(plan.taper_width() >= 8);
        assert!(FlowPlan::padded(grid, 100, 100, 8).is_err());
        assert!(FlowPlan::padded(grid, 1548, 1548, 4).is_err());
        assert_eq!(plan.central_range(0.5), 250..750);
    }

    #[test]
    fn zero_parameter_is_identity() {
        let w = bump_path();
        let plan = FlowPlan::new(*w.grid()).unwrap();
        let out = apply_flow(&w, 0.0, &plan).unwrap();
        let d = w.values().iter().zip(out.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn cosine_phase_shift() {
        // A whole number of periods of cos(t/2) keeps the circular model exact.
        let n = 4096;
        let dt = 8.0 * 2.0 * 2.0 * PI / n as f64;
        let grid = TimeGrid::new(0.0, dt, n).unwrap();
        let w = OuPath::from_fn(grid, |t| (t / 2.0).cos()).unwrap();
        let plan = FlowPlan::circular(grid);
        for u in [1.0, 0.5, -0.3, 2.25] {
            let out = apply_flow(&w, u, &plan).unwrap();
            for (t, v) in grid.times().zip(out.values()) {
                assert!((v - (t / 2.0 - u * PI / 2.0).cos()).abs() < 1e-6, "u={u} t={t}");
            }
        }
        // u = 1 sends cos(t/2) to sin(t/2)
        let out = apply_flow(&w, 1.0, &plan).unwrap();
        assert!((out.values()[0] - 0.0).abs() < 1e-9);
    }

    #[test]
    fn padded_cosine_on_central_window() {
        let grid = TimeGrid::spanning(-400.0, 400.0, 0.125).unwrap();
        let w = OuPath::from_fn(grid, |t| (t / 2.0).cos()).unwrap();
        let plan = FlowPlan::new(grid).unwrap();
        let out = apply_flow(&w, 0.5, &plan).unwrap();
        for (t, v) in grid.times().zip(out.values()) {
            if t.abs() <= 100.0 {
                assert!((v - (t / 2.0 - PI / 4.0).cos()).abs() < 1e-6, "t={t}: {v}");
            }
        }
    }

    #[test]
    fn unit_flow_matches_time_domain() {
        let w = bump_path();
        let plan = FlowPlan::new(*w.grid()).unwrap();
        let spectral = apply_flow(&w, 1.0, &plan).unwrap();
        let direct = s_time_domain(&w, ConvolutionOptions::default()).unwrap();
        let d = diff_on_common(&spectral, &direct.path, -50.0, 50.0);
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn integer_flows_match_signed_kernels() {
        let w = bump_path();
        let plan = FlowPlan::new(*w.grid()).unwrap();
        for n in [-2i64, -1, 1, 2] {
            let spectral = apply_flow(&w, n as f64, &plan).unwrap();
            let direct = apply_signed_kernel(&w, &integer_kernel(n), ConvolutionOptions::default()).unwrap();
            let d = diff_on_common(&spectral, &direct.path, -50.0, 50.0);
            assert!(d < 1e-5, "n={n}: {d}");
        }
    }

    #[test]
    fn group_law() {
        let w = bump_path();
        let plan = FlowPlan::new(*w.grid()).unwrap();
        for (u, v) in [(0.3, 0.7), (-1.2, 1.2), (1.5, -0.4)] {
            let d = group_law_defect(&w, u, v, &plan).unwrap();
            assert!(d < 1e-6, "({u},{v}): {d}");
        }
        assert!(group_law_defect(&w, 0.0, 0.0, &plan).unwrap() < 1e-12);
        let back = apply_flow(&apply_flow(&w, -1.2, &plan).unwrap(), 1.2, &plan).unwrap();
        let r = plan.central_range(0.5);
        let d = w.values()[r.clone()]
            .iter()
            .zip(&back.values()[r])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn prepared_value_matches_full_inverse() {
        let w = bump_path();
        let plan = FlowPlan::new(*w.grid()).unwrap();
        let prep = plan.prepare(&w).unwrap();
        let full = prep.apply(0.7).unwrap();
        for j in [0, 3000, 3200, 6400] {
            assert!((prep.value_at(j, 0.7) - full.values()[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn iterates_match_full_inverse() {
        let grid = TimeGrid::new(-64.0, 0.5, 256).unwrap();
        let w = OuPath::from_fn(grid, |t| bump(t) + 0.2 * (0.9 * t).cos()).unwrap();
        let plan = FlowPlan::circular(grid);
        let prep = plan.prepare(&w).unwrap();
        let nodes = [128, 130, 0];
        let rows = prep.iterate_at(&nodes, 0.7, 150).unwrap();
        assert_eq!(rows.len(), 150);
        for m in [0, 1, 63, 64, 65, 149] {
            let full = prep.apply(m as f64 * 0.7).unwrap();
            for (i, &j) in nodes.iter().enumerate() {
                assert!((rows[m][i] - full.values()[j]).abs() < 1e-12, "m={m} j={j}");
            }
        }
        assert!(prep.iterate_at(&[256], 0.7, 2).is_err());
    }

    #[test]
    fn rejects_mismatched_grid() {
        let w = bump_path();
        let plan = FlowPlan::circular(TimeGrid::new(0.0, 0.5, 64).unwrap());
        assert!(matches!(apply_flow(&w, 0.5, &plan), Err(Error::Parameter(_))));
    }

    #[test]
    fn circular_model_commutes_with_cyclic_shift() {
        let grid = TimeGrid::new(0.0, 0.25, 1024).unwrap();
        let w = OuPath::from_fn(grid, |t| (t * 0.3).sin() + bump(t - 100.0)).unwrap();
        let plan = FlowPlan::circular(grid);
        let k = 37;
        let mut rotated = w.values().to_vec();
        rotated.rotate_left(k);
        let shifted = OuPath::new(grid, rotated).unwrap();
        let a = apply_flow(&shifted, 0.6, &plan).unwrap();
        let mut b = apply_flow(&w, 0.6, &plan).unwrap().into_values();
        b.rotate_left(k);
        let d = a.values().iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn windowed_model_commutes_with_translation() {
        let wide = OuPath::from_fn(TimeGrid::spanning(-150.0, 150.0, 1.0 / 16.0).unwrap(), bump).unwrap();
        let s = 40.0 / 16.0;
        let a_in = wide.window(-100.0, 100.0).unwrap();
        let b_in = wide.window(-100.0 + s, 100.0 + s).unwrap();
        let a = apply_flow(&a_in, 0.8, &FlowPlan::new(*a_in.grid()).unwrap()).unwrap();
        let b = apply_flow(&b_in, 0.8, &FlowPlan::new(*b_in.grid()).unwrap()).unwrap();
        // translating b's output back by s lines it up with a
        let b_back = translate(&translate(&b, s), -s);
        let d = diff_on_common(&a, &b_back, -50.0, 50.0);
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn inner_products_decay_and_are_symmetric() {
        let g = OuPath::from_fn(TimeGrid::spanning(-60.0, 60.0, 1.0 / 16.0).unwrap(), |t| (-t * t / 2.0).exp()).unwrap();
        let plan = FlowPlan::new(*g.grid()).unwrap();
        let vals = inner_product_decay(&g, &g, &[0.0, 50.0, -50.0, 3.0, -3.0], &plan).unwrap();
        let norm2 = vals[0].re;
        let prep = plan.prepare(&g).unwrap();
        let direct = crate::paths::hu_norm_from_spectrum(prep.spectrum(), g.grid().dt());
        assert!((norm2 - direct).abs() < 1e-12 * direct);
        assert!(vals[1].norm() <= 0.05 * norm2, "{}", vals[1]);
        assert!((vals[1].re - vals[2].re).abs() < 1e-10);
        assert!((vals[3] - vals[4].conj()).norm() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn flow_is_an_isometry(a in 0.2f64..2.0, c in -5.0f64..5.0, f in 0.0f64..3.0, u in -4.0f64..4.0) {
            let grid = TimeGrid::spanning(-40.0, 40.0, 1.0 / 8.0).unwrap();
            let w = OuPath::from_fn(grid, |t| (-(t - c).powi(2) * a / 4.0).exp() * (f * t).cos()).unwrap();
            let plan = FlowPlan::circular(grid);
            let before = hu_norm_spectral(&w);
            let after = hu_norm_spectral(&apply_flow(&w, u, &plan).unwrap());
            prop_assert!((after - before).abs() < 1e-10 * before);
        }
    }
}
